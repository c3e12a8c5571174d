"""Black-box adapters: the systems whose behavior gets explained.

A BlackBoxSpec names one of five adapter kinds and its parameters; every
adapter answers query_batch with one output sequence per input, using the
empty (absent) sequence for a non-answer. Built-in synthetic boxes exist
for tests and calibration; the subprocess and HTTP kinds wrap real
systems.
"""
from __future__ import annotations

import json
import os
import select
import subprocess
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

from .core import Side, TokenSequence
from .errors import BlackBoxFailureError, FormatError, ProtocolError

__all__ = [
    "BlackBoxKind",
    "BlackBoxSpec",
    "G2PDictionary",
    "make_synthetic_biased",
    "open_black_box",
    "query_batch",
]


class BlackBoxKind(str, Enum):
    DICT_G2P = "dict_g2p"
    SYNTHETIC_PERMUTER = "synthetic_permuter"
    SYNTHETIC_BIASED = "synthetic_biased"
    SUBPROCESS = "subprocess"
    HTTP = "http"


_REQUIRED_PARAMS: dict[BlackBoxKind, tuple[str, ...]] = {
    BlackBoxKind.DICT_G2P: (),          # one of path/dictionary, checked below
    BlackBoxKind.SYNTHETIC_PERMUTER: (),
    BlackBoxKind.SYNTHETIC_BIASED: ("trigger", "register_on", "register_off", "base"),
    BlackBoxKind.SUBPROCESS: ("command",),
    BlackBoxKind.HTTP: ("url",),
}


@dataclass(frozen=True)
class BlackBoxSpec:
    """Declarative description of a black box.

    parameters by kind:
      dict_g2p            path (dictionary file) or dictionary (G2PDictionary)
      synthetic_permuter  permutation (optional, sequence of int),
                          token_map (optional, surface -> surface)
      synthetic_biased    trigger, register_on, register_off, base (BlackBoxSpec)
      subprocess          command (argv list or shell string)
      http                url (full endpoint accepting POST {"inputs": [...]})
    """

    kind: BlackBoxKind
    parameters: Mapping[str, Any] = field(default_factory=dict)
    batch_size: int = 32
    timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.timeout > 0.0):
            raise ValueError("timeout must be > 0")
        missing = [k for k in _REQUIRED_PARAMS[self.kind] if k not in self.parameters]
        if missing:
            raise ValueError(f"{self.kind.value} parameters missing {missing}")
        if self.kind is BlackBoxKind.DICT_G2P:
            if "path" not in self.parameters and "dictionary" not in self.parameters:
                raise ValueError("dict_g2p needs a 'path' or a preloaded 'dictionary'")
        if self.kind is BlackBoxKind.SYNTHETIC_PERMUTER:
            perm = self.parameters.get("permutation")
            if perm is not None and sorted(perm) != list(range(len(perm))):
                raise ValueError(f"{list(perm)} is not a permutation of 0..{len(perm) - 1}")
        if self.kind is BlackBoxKind.SYNTHETIC_BIASED:
            base = self.parameters["base"]
            if not isinstance(base, BlackBoxSpec):
                raise ValueError("'base' must itself be a BlackBoxSpec")

    def describe(self) -> dict[str, Any]:
        """JSON-safe summary for provenance blocks."""
        params: dict[str, Any] = {}
        for key, val in sorted(self.parameters.items()):
            if isinstance(val, BlackBoxSpec):
                params[key] = val.describe()
            elif isinstance(val, G2PDictionary):
                params[key] = f"<dictionary: {len(val.entries)} entries>"
            elif isinstance(val, Mapping):
                params[key] = dict(sorted(val.items()))
            elif isinstance(val, (list, tuple)):
                params[key] = list(val)
            else:
                params[key] = val
        return {"kind": self.kind.value, "parameters": params,
                "batch_size": self.batch_size, "timeout": self.timeout}


# ---------------------------------------------------------------------------
# pronunciation dictionary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class G2PDictionary:
    """Word -> phoneme-sequence table, stored with uppercase keys.

    The file format is one entry per line, word then phonemes, separated
    by whitespace. Lines starting with ';;;' are comments. Alternate
    pronunciations ('WORD(2) ...') are skipped; the primary entry wins.
    """

    entries: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("dictionary must be non-empty")
        for word, phones in self.entries.items():
            if not word or not phones:
                raise ValueError(f"empty entry for {word!r}")
            for p in phones:
                if not (1 <= len(p) <= 3):
                    raise ValueError(f"phoneme {p!r} of {word!r} must be 1-3 characters")

    @classmethod
    def load(cls, path: str) -> "G2PDictionary":
        entries: dict[str, tuple[str, ...]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith(";;;"):
                    continue
                parts = line.split()
                if len(parts) < 2:
                    raise FormatError("entry needs a word and at least one phoneme",
                                      path=path, line=lineno)
                word = parts[0].upper()
                if "(" in word:  # alternate pronunciation
                    continue
                if word in entries:
                    raise FormatError(f"duplicate entry for {word}", path=path, line=lineno)
                for p in parts[1:]:
                    if not (1 <= len(p) <= 3):
                        raise FormatError(f"phoneme {p!r} must be 1-3 characters",
                                          path=path, line=lineno)
                entries[word] = tuple(parts[1:])
        if not entries:
            raise FormatError("dictionary file has no entries", path=path)
        return cls(entries)

    def lookup(self, word: str) -> tuple[str, ...] | None:
        return self.entries.get(word.upper())

    def words(self) -> list[str]:
        """Sorted lowercase word list, e.g. for edit-distance pools."""
        return sorted(w.lower() for w in self.entries)


# ---------------------------------------------------------------------------
# adapters
# ---------------------------------------------------------------------------

def _out(surfaces: Sequence[str]) -> TokenSequence:
    if not surfaces:
        return TokenSequence.absent(Side.OUTPUT)
    return TokenSequence.from_surfaces(surfaces, Side.OUTPUT)


class _DictG2PAdapter:
    def __init__(self, spec: BlackBoxSpec):
        d = spec.parameters.get("dictionary")
        self.dictionary = d if d is not None else G2PDictionary.load(spec.parameters["path"])

    def query_batch(self, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
        out = []
        for x in inputs:
            phones = self.dictionary.lookup("".join(x.surfaces))
            out.append(_out(phones or ()))
        return out

    def close(self) -> None:
        pass


class _PermuterAdapter:
    def __init__(self, spec: BlackBoxSpec):
        perm = spec.parameters.get("permutation")
        self.perm = tuple(perm) if perm is not None else None
        tm = spec.parameters.get("token_map")
        self.token_map = dict(tm) if tm else {}

    def query_batch(self, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
        out = []
        for x in inputs:
            s = list(x.surfaces)
            if self.perm is None:
                reordered = s
            else:
                # inputs shorter than the permutation lose the missing slots;
                # positions past its length pass through in place
                reordered = [s[p] for p in self.perm if p < len(s)]
                reordered += s[len(self.perm):]
            mapped = [self.token_map.get(t, t) for t in reordered]
            out.append(_out(mapped))
        return out

    def close(self) -> None:
        pass


class _BiasedAdapter:
    def __init__(self, spec: BlackBoxSpec):
        self.trigger = spec.parameters["trigger"]
        self.on = spec.parameters["register_on"]
        self.off = spec.parameters["register_off"]
        self.base = open_black_box(spec.parameters["base"])

    def query_batch(self, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
        base_out = self.base.query_batch(inputs)
        out = []
        for x, y in zip(inputs, base_out):
            if y.is_absent:
                out.append(y)
                continue
            if self.trigger in x.surfaces:
                swapped = [self.on if t == self.off else t for t in y.surfaces]
            else:
                swapped = [self.off if t == self.on else t for t in y.surfaces]
            out.append(_out(swapped))
        return out

    def close(self) -> None:
        self.base.close()


class _SubprocessAdapter:
    """Line protocol: one input line in, one output line back, UTF-8.

    An empty output line means "no answer" for that input. The wrapped
    process lives for the adapter's lifetime; a lock serializes batches.
    """

    def __init__(self, spec: BlackBoxSpec):
        cmd = spec.parameters["command"]
        self.timeout = spec.timeout
        self._lock = threading.Lock()
        self._buf = bytearray()
        self._proc = subprocess.Popen(
            cmd,
            shell=isinstance(cmd, str),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )

    def _read_line(self, deadline: float, index: int) -> str:
        fd = self._proc.stdout.fileno()
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode("utf-8")
                del self._buf[:nl + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BlackBoxFailureError(
                    f"subprocess answer timed out after {self.timeout}s",
                    failing_index=index)
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise BlackBoxFailureError(
                    f"subprocess answer timed out after {self.timeout}s",
                    failing_index=index)
            chunk = os.read(fd, 65536)
            if not chunk:
                raise BlackBoxFailureError(
                    f"subprocess exited (code {self._proc.poll()}) before answering",
                    failing_index=index)
            self._buf.extend(chunk)

    def query_batch(self, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
        with self._lock:
            out = []
            for i, x in enumerate(inputs):
                text = x.text()
                if "\n" in text:
                    raise ProtocolError("input text may not contain newlines")
                if self._proc.poll() is not None:
                    raise BlackBoxFailureError(
                        f"subprocess exited with code {self._proc.returncode}",
                        failing_index=i)
                try:
                    self._proc.stdin.write((text + "\n").encode("utf-8"))
                    self._proc.stdin.flush()
                except (BrokenPipeError, OSError) as exc:
                    raise BlackBoxFailureError(
                        f"subprocess rejected input: {exc}", failing_index=i) from exc
                line = self._read_line(time.monotonic() + self.timeout, i)
                out.append(_out(line.split()))
            return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class _HTTPAdapter:
    def __init__(self, spec: BlackBoxSpec):
        self.url = spec.parameters["url"]
        self.batch_size = spec.batch_size
        self.timeout = spec.timeout

    def _post(self, texts: list[str]) -> list[str]:
        payload = json.dumps({"inputs": texts}).encode("utf-8")
        req = urllib.request.Request(self.url, data=payload,
                                     headers={"Content-Type": "application/json"},
                                     method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except urllib.error.HTTPError as exc:
            raise BlackBoxFailureError(
                f"black box at {self.url} answered HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise BlackBoxFailureError(f"black box at {self.url} unreachable: {exc}") from exc
        try:
            outputs = json.loads(body.decode("utf-8"))["outputs"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed answer from {self.url}: {exc}") from exc
        if not isinstance(outputs, list) or len(outputs) != len(texts):
            raise ProtocolError(
                f"{self.url} answered {len(outputs) if isinstance(outputs, list) else '?'} "
                f"outputs for {len(texts)} inputs")
        for i, line in enumerate(outputs):
            if not isinstance(line, str):
                raise ProtocolError(f"output {i} from {self.url} is not a string")
        return outputs

    def query_batch(self, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
        out: list[TokenSequence] = []
        for start in range(0, len(inputs), self.batch_size):
            chunk = inputs[start:start + self.batch_size]
            for line in self._post([x.text() for x in chunk]):
                out.append(_out(line.split()))
        return out

    def close(self) -> None:
        pass


_ADAPTERS = {
    BlackBoxKind.DICT_G2P: _DictG2PAdapter,
    BlackBoxKind.SYNTHETIC_PERMUTER: _PermuterAdapter,
    BlackBoxKind.SYNTHETIC_BIASED: _BiasedAdapter,
    BlackBoxKind.SUBPROCESS: _SubprocessAdapter,
    BlackBoxKind.HTTP: _HTTPAdapter,
}


class _BoxHandle:
    """Context-manager wrapper so callers never touch adapter classes."""

    def __init__(self, adapter):
        self._adapter = adapter

    def query_batch(self, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
        return self._adapter.query_batch(inputs)

    def close(self) -> None:
        self._adapter.close()

    def __enter__(self) -> "_BoxHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_black_box(spec: BlackBoxSpec) -> _BoxHandle:
    return _BoxHandle(_ADAPTERS[spec.kind](spec))


def query_batch(spec: BlackBoxSpec, inputs: Sequence[TokenSequence]) -> list[TokenSequence]:
    """One-shot convenience: open, query, close.

    Outputs align with inputs; the absent marker records a non-answer.
    """
    with open_black_box(spec) as box:
        return box.query_batch(inputs)


def make_synthetic_biased(trigger: str, register_on: str, register_off: str,
                          base: BlackBoxSpec) -> BlackBoxSpec:
    """Wrap a base box with a register flip keyed on one input word.

    Whenever `trigger` appears in the input, every `register_off` token in
    the base output is swapped to `register_on`; without the trigger the
    swap runs the other way. The trigger must not be producible by the
    base box itself, otherwise the flip would alias with real content;
    this is checked where the base's output vocabulary is statically
    known (a permuter's token_map).
    """
    if len({trigger, register_on, register_off}) != 3:
        raise ValueError("trigger, register_on, register_off must be three distinct words")
    if base.kind is BlackBoxKind.SYNTHETIC_PERMUTER:
        tm = base.parameters.get("token_map")
        if tm and trigger in tm.values():
            raise ValueError(f"trigger {trigger!r} is in the base box's output vocabulary")
    return BlackBoxSpec(
        kind=BlackBoxKind.SYNTHETIC_BIASED,
        parameters={"trigger": trigger, "register_on": register_on,
                    "register_off": register_off, "base": base},
        batch_size=base.batch_size,
        timeout=base.timeout,
    )
