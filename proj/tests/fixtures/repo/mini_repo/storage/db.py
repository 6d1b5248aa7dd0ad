class Db:
    """A tiny in-memory key value store."""

    def __init__(self, name):
        self.name = name
        self._rows = {}

    def insert(self, key, value):
        """Store a value under a key, replacing any previous value."""
        self._rows[key] = value
        return len(self._rows)

    @staticmethod
    def fetch_default():
        return None

    def fetch(self, key):
        """Look up the value stored under a key."""
        return self._rows.get(key, Db.fetch_default())

    def fetch_many(self, keys):
        """Return the stored values for each key in order, skipping missing keys."""
        values = []
        for key in keys:
            value = self.fetch(key)
            if value is not None:
                values.append(value)
        return values
