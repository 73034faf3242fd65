import logging
import os
from datetime import datetime

LOG_FILE = f"{datetime.now().strftime('%m_%d_%Y_%H_%M_%S')}.log"
logs_path = os.path.join(os.getcwd(), "logs")
os.makedirs(logs_path, exist_ok=True)

LOG_FILE_PATH = os.path.join(logs_path, LOG_FILE)
LOG_FORMAT = "[ %(asctime)s ] %(lineno)d %(name)s - %(levelname)s - %(message)s"

logging.basicConfig(
    filename=LOG_FILE_PATH,
    format=LOG_FORMAT,
    level=logging.INFO,
)

_run_handlers = {}
_saved_levels = {}


def attach_run_log(out_dir):
    """Mirror the process log into ``<out_dir>/run.log`` for one experiment."""
    os.makedirs(out_dir, exist_ok=True)
    run_log_path = os.path.abspath(os.path.join(out_dir, "run.log"))
    if run_log_path in _run_handlers:
        return run_log_path

    handler = logging.FileHandler(run_log_path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(logging.INFO)
    root = logging.getLogger()
    # basicConfig is a no-op when the host configured logging first
    _saved_levels[run_log_path] = root.level
    if root.getEffectiveLevel() > logging.INFO:
        root.setLevel(logging.INFO)
    root.addHandler(handler)
    _run_handlers[run_log_path] = handler
    return run_log_path


def detach_run_log(run_log_path):
    run_log_path = os.path.abspath(run_log_path)
    handler = _run_handlers.pop(run_log_path, None)
    if handler is None:
        return
    root = logging.getLogger()
    root.removeHandler(handler)
    handler.close()
    root.setLevel(_saved_levels.pop(run_log_path, root.level))
