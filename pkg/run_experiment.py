# run_experiment.py
"""Launcher: python run_experiment.py <simulate|converge|moments|check> --config <file.yaml>"""
import pathlib
import sys

REPO_ROOT = pathlib.Path(__file__).resolve().parent  # holds experiment_app/ and project_code/
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from experiment_app.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
