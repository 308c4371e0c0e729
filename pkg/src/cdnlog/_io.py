import gzip
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


def open_text(path, mode="rt"):
    """Open ``path`` as UTF-8 text, decompressing ``.gz`` transparently.

    Lines are terminated by ``\\n`` only; a trailing ``\\r`` stays on the line.
    """
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode, encoding="utf-8", errors="replace", newline="\n")
    return open(path, mode, encoding="utf-8", errors="replace", newline="\n")


def read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


@contextmanager
def atomic_write(path, newline="\n"):
    """Write to a sibling temp file, then rename over ``path``.

    Readers see either the old file or the complete new one.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
