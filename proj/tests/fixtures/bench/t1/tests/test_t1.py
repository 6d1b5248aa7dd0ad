import os
import sys
import tempfile

sys.path.insert(0, os.getcwd())

from mini_repo.service import load_entries


def _write(text):
    fd, path = tempfile.mkstemp(suffix=".cfg")
    with os.fdopen(fd, "w") as handle:
        handle.write(text)
    return path


def test_basic():
    path = _write("Name = demo\nMax-Size = 10\n")
    assert load_entries(path) == {"name": "demo", "max_size": "10"}


def test_comments():
    path = _write("# comment\n\nA-B = 1\n")
    assert load_entries(path) == {"a_b": "1"}


if __name__ == "__main__":
    globals()["test_" + sys.argv[1]]()
