"""Byte-level tokenizer: 256 raw byte values plus reserved special ids.

Token ids 0..255 are the byte values themselves, so encoding never fails
and decoding is exact on any byte sequence. Three ids are reserved above
the byte range: a document separator for packed streams and two marker
tokens that bracket teacher labels in instruction-style data.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

BYTE_VOCAB = 256
DOC_SEPARATOR = 256
TEACHER_MARK_A = 257
TEACHER_MARK_B = 258
VOCAB_SIZE = 259

SPECIAL_TOKENS = {
    "doc_separator": DOC_SEPARATOR,
    "teacher_mark_a": TEACHER_MARK_A,
    "teacher_mark_b": TEACHER_MARK_B,
}


def encode_bytes(data: bytes) -> np.ndarray:
    """Byte values as token ids, one per byte."""
    return np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)


def encode(text: str) -> np.ndarray:
    return encode_bytes(text.encode("utf-8"))


def decode_bytes(ids, drop_specials: bool = True) -> bytes:
    arr = np.asarray(ids, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
        raise ConfigError("token id outside the byte-level vocabulary")
    if drop_specials:
        arr = arr[arr < BYTE_VOCAB]
    elif arr.size and arr.max() >= BYTE_VOCAB:
        raise ConfigError("special token has no byte representation")
    return arr.astype(np.uint8).tobytes()


def decode(ids, drop_specials: bool = True, errors: str = "replace") -> str:
    return decode_bytes(ids, drop_specials=drop_specials).decode(
        "utf-8", errors=errors)


def tokenize_documents(documents, separate: bool = True) -> np.ndarray:
    """Concatenate byte-encoded documents, separator token between them."""
    pieces = []
    for i, doc in enumerate(documents):
        if i and separate:
            pieces.append(np.array([DOC_SEPARATOR], dtype=np.int64))
        data = doc.encode("utf-8") if isinstance(doc, str) else bytes(doc)
        pieces.append(encode_bytes(data))
    if not pieces:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(pieces)
