"""Content-addressed image store.

Addresses are the lowercase sha256 hex digest of the image bytes. Files
are stored flat under a root directory, named by address. Extra read-only
directories (e.g. a dataset asset directory) can be searched on get.
"""

from __future__ import annotations

import hashlib
from pathlib import Path


class ImageNotFound(KeyError):
    def __init__(self, address: str):
        super().__init__(address)
        self.address = address


def content_address(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sniff_mime(data: bytes) -> str:
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return "image/png"
    if data.startswith(b"\xff\xd8\xff"):
        return "image/jpeg"
    if data[:6] in (b"GIF87a", b"GIF89a"):
        return "image/gif"
    return "application/octet-stream"


class ImageStore:
    """Flat directory of content-addressed image files."""

    def __init__(self, root: str | Path, extra_dirs: tuple[str | Path, ...] = ()):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.extra_dirs = tuple(Path(d) for d in extra_dirs)

    def put(self, data: bytes) -> str:
        addr = content_address(data)
        target = self.root / addr
        if not target.exists():
            tmp = target.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.rename(target)
        return addr

    def _find(self, address: str) -> Path | None:
        for base in (self.root, *self.extra_dirs):
            candidate = base / address
            if candidate.is_file():
                return candidate
        return None

    def has(self, address: str) -> bool:
        return self._find(address) is not None

    def get(self, address: str) -> bytes:
        found = self._find(address)
        if found is None:
            raise ImageNotFound(address)
        return found.read_bytes()
