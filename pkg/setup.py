from setuptools import setup, find_packages

setup(
    name="mulch",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_data={"config": ["config.json"]},
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.11",
        "scikit-learn>=1.4",
        "click>=8.1",
        "jsonschema>=4.22",
        "python-dotenv>=1.0",
    ],
    entry_points={
        "console_scripts": [
            "mulch=src.cli.main:cli",
        ],
    },
)
