from dotenv import load_dotenv
import json
import os


load_dotenv()

CONFIG_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, "config.json")


def load_config(path: str = None) -> dict:
    """
    Packaged defaults, then an optional user file, then environment overrides
    (MULCH_WORKERS, MULCH_LOG_FILE).
    """
    with open(DEFAULT_CONFIG, "r") as f:
        config = json.load(f)

    if path is not None:
        with open(path, "r") as f:
            user = json.load(f)
        if not isinstance(user, dict):
            raise ValueError(f"Config file {path} must hold a JSON object.")
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key] = {**config[key], **value}
            else:
                config[key] = value

    workers = os.getenv("MULCH_WORKERS")
    if workers:
        config["workers"] = int(workers)

    log_file = os.getenv("MULCH_LOG_FILE")
    if log_file:
        config["log_file"] = log_file

    return config
