from logging.handlers import TimedRotatingFileHandler
import logging
import json
import time


LOGGER_NAME = "mulch"


def configure_logging(log_file: str = "mulch_logs.log", level=logging.INFO):
    """
    Rotating JSON-lines file log plus warnings on stderr. Called once by the CLI;
    library code only emits entries.
    """
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    if log_file:
        log_handler = TimedRotatingFileHandler(
            log_file, when="midnight", interval=1, backupCount=30
        )
        log_handler.setFormatter(logging.Formatter("%(message)s"))
        log_handler.suffix = "%Y%m%d"
        logger.addHandler(log_handler)

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(logging.WARNING)
    stream_handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    logger.addHandler(stream_handler)

    logger.setLevel(level)
    return logger


def log_entry(component: str, metadata: dict, level=logging.INFO):
    entry = {"timestamp": time.ctime(), "component": component, "metadata": metadata}
    logging.getLogger(f"{LOGGER_NAME}.{component}").log(
        level, json.dumps(entry, default=_to_builtin)
    )


def _to_builtin(value):
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)
