import os


def read_text(path):
    """Read the entire contents of a text file from disk and return it as a string."""
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def parse_config(text):
    """Parse configuration text made of key = value lines into a dictionary of entries."""
    entries = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def normalize_key(key):
    return key.strip().lower().replace("-", "_")
