"""Dictionary parsing and the four black-box adapters."""

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from socrat.blackbox import (BlackBoxKind, BlackBoxSpec, G2PDictionary,
                             make_synthetic_biased, open_black_box,
                             query_batch)
from socrat.core import Side, tokenize
from socrat.errors import (BlackBoxFailureError, FormatError, ProtocolError)


def _x(text: str):
    return tokenize(text, side=Side.INPUT)


class TestDictionary:
    def test_load_skips_comments_and_alternates(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text(";;; header\n"
                     "CAT  K AE1 T\n"
                     "CAT(1)  K AA0 T\n"
                     "\n"
                     "DOG  D AO1 G\n")
        d = G2PDictionary.load(str(p))
        assert d.lookup("cat") == ("K", "AE1", "T")
        assert d.lookup("Dog") == ("D", "AO1", "G")
        assert d.lookup("missing") is None
        assert d.words() == ["cat", "dog"]

    def test_duplicate_entry_rejected(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text("CAT  K\nCAT  T\n")
        with pytest.raises(FormatError) as err:
            G2PDictionary.load(str(p))
        assert err.value.line == 2

    def test_entry_needs_phonemes(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text("CAT\n")
        with pytest.raises(FormatError):
            G2PDictionary.load(str(p))

    def test_phoneme_length_limit(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text("CAT  QUAD\n")
        with pytest.raises(FormatError):
            G2PDictionary.load(str(p))

    def test_empty_dictionary_rejected(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text(";;; nothing here\n")
        with pytest.raises(FormatError):
            G2PDictionary.load(str(p))


class TestSpecValidation:
    def test_required_params(self):
        with pytest.raises(ValueError):
            BlackBoxSpec(BlackBoxKind.HTTP, {})
        with pytest.raises(ValueError):
            BlackBoxSpec(BlackBoxKind.SUBPROCESS, {})
        with pytest.raises(ValueError):
            BlackBoxSpec(BlackBoxKind.DICT_G2P, {})

    def test_permutation_must_be_valid(self):
        BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER, {"permutation": (1, 0)})
        with pytest.raises(ValueError):
            BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER,
                         {"permutation": (0, 2)})

    def test_describe_is_json_safe(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text("CAT  K\n")
        spec = BlackBoxSpec(BlackBoxKind.DICT_G2P, {"path": str(p)})
        json.dumps(spec.describe())
        wrapped = make_synthetic_biased("however", "tu", "vous", spec)
        json.dumps(wrapped.describe())


class TestDictBox:
    def test_lookup_and_oov_absent(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text("BAD  B AE1 D\n")
        spec = BlackBoxSpec(BlackBoxKind.DICT_G2P, {"path": str(p)})
        got = query_batch(spec, [tokenize("bad", side=Side.INPUT),
                                 tokenize("nope", side=Side.INPUT)])
        assert got[0].surfaces == ("B", "AE1", "D")
        assert got[1].is_absent

    def test_character_tokens_joined(self, tmp_path):
        p = tmp_path / "d.dict"
        p.write_text("BAD  B AE1 D\n")
        spec = BlackBoxSpec(BlackBoxKind.DICT_G2P, {"path": str(p)})
        from socrat.core import Scheme
        x = tokenize("bad", Scheme.CHARACTER, Side.INPUT)
        assert query_batch(spec, [x])[0].surfaces == ("B", "AE1", "D")


class TestPermuter:
    def test_identity(self):
        spec = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER, {})
        assert query_batch(spec, [_x("a b c")])[0].surfaces == ("a", "b", "c")

    def test_reorder_with_short_and_long_inputs(self):
        spec = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER,
                            {"permutation": (2, 0, 1)})
        got = query_batch(spec, [_x("a b c"), _x("a b"), _x("a b c d")])
        assert got[0].surfaces == ("c", "a", "b")
        # missing slot 2 is dropped, the rest keep their order
        assert got[1].surfaces == ("a", "b")
        # positions past the permutation pass through
        assert got[2].surfaces == ("c", "a", "b", "d")

    def test_token_map_applies_after_reorder(self):
        spec = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER,
                            {"permutation": (1, 0),
                             "token_map": {"you": "vous"}})
        assert query_batch(spec, [_x("you go")])[0].surfaces == ("go", "vous")


class TestBiasedBox:
    def _spec(self):
        base = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER,
                            {"token_map": {"you": "vous"}})
        return make_synthetic_biased("however", "tu", "vous", base)

    def test_flip_on_trigger(self):
        spec = self._spec()
        got = query_batch(spec, [_x("however you go"), _x("you go")])
        assert got[0].surfaces == ("however", "tu", "go")
        assert got[1].surfaces == ("vous", "go")

    def test_distinct_words_required(self):
        base = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER, {})
        with pytest.raises(ValueError):
            make_synthetic_biased("tu", "tu", "vous", base)

    def test_trigger_must_not_alias_base_output(self):
        base = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER,
                            {"token_map": {"x": "however"}})
        with pytest.raises(ValueError):
            make_synthetic_biased("however", "tu", "vous", base)


UPPER_SCRIPT = ("import sys\n"
                "for line in sys.stdin:\n"
                "    sys.stdout.write(line.upper())\n"
                "    sys.stdout.flush()\n")

DROP_B_SCRIPT = ("import sys\n"
                 "for line in sys.stdin:\n"
                 "    out = '' if line.strip().startswith('b') else line.strip()\n"
                 "    sys.stdout.write(out + '\\n')\n"
                 "    sys.stdout.flush()\n")


class TestSubprocessBox:
    def _spec(self, script, timeout=10.0):
        return BlackBoxSpec(BlackBoxKind.SUBPROCESS,
                            {"command": [sys.executable, "-c", script]},
                            timeout=timeout)

    def test_line_protocol(self):
        with open_black_box(self._spec(UPPER_SCRIPT)) as box:
            got = box.query_batch([_x("a b"), _x("c")])
        assert got[0].surfaces == ("A", "B")
        assert got[1].surfaces == ("C",)

    def test_empty_line_is_absent(self):
        with open_black_box(self._spec(DROP_B_SCRIPT)) as box:
            got = box.query_batch([_x("b x"), _x("a x")])
        assert got[0].is_absent
        assert got[1].surfaces == ("a", "x")

    def test_newline_in_input_rejected(self):
        from socrat.core import Scheme
        x = tokenize("a\nb", Scheme.CHARACTER, Side.INPUT)
        with open_black_box(self._spec(UPPER_SCRIPT)) as box:
            with pytest.raises(ProtocolError):
                box.query_batch([x])

    def test_dead_process_reports_failing_index(self):
        spec = self._spec("import sys; sys.exit(3)")
        with open_black_box(spec) as box:
            with pytest.raises(BlackBoxFailureError) as err:
                for _ in range(20):  # the exit may race the first write
                    box.query_batch([_x("a")])
        assert err.value.failing_index == 0

    def test_unresponsive_process_times_out(self):
        spec = self._spec("import time\ntime.sleep(60)\n", timeout=0.4)
        with open_black_box(spec) as box:
            with pytest.raises(BlackBoxFailureError) as err:
                box.query_batch([_x("a"), _x("b")])
        assert "time" in str(err.value).lower()


class _BoxHandler(BaseHTTPRequestHandler):
    mode = "upper"
    batch_sizes: list[int] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.batch_sizes.append(len(body["inputs"]))
        if self.mode == "upper":
            payload = json.dumps(
                {"outputs": [t.upper() for t in body["inputs"]]}).encode()
            self.send_response(200)
        elif self.mode == "short":
            payload = json.dumps({"outputs": ["only"]}).encode()
            self.send_response(200)
        elif self.mode == "garbage":
            payload = b"not json"
            self.send_response(200)
        else:
            payload = b"boom"
            self.send_response(500)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def box_server():
    server = HTTPServer(("127.0.0.1", 0), _BoxHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _BoxHandler.batch_sizes = []
    yield f"http://127.0.0.1:{server.server_port}/box"
    server.shutdown()


class TestHTTPBox:
    def test_roundtrip_and_batching(self, box_server):
        _BoxHandler.mode = "upper"
        spec = BlackBoxSpec(BlackBoxKind.HTTP, {"url": box_server},
                            batch_size=2)
        got = query_batch(spec, [_x("a"), _x("b"), _x("c")])
        assert [g.surfaces for g in got] == [("A",), ("B",), ("C",)]
        assert _BoxHandler.batch_sizes == [2, 1]

    def test_empty_output_is_absent(self, box_server):
        _BoxHandler.mode = "upper"
        spec = BlackBoxSpec(BlackBoxKind.HTTP, {"url": box_server})
        from socrat.core import Scheme
        x = tokenize(" ", Scheme.CHARACTER, Side.INPUT)
        assert query_batch(spec, [x])[0].is_absent

    def test_length_mismatch_is_protocol_error(self, box_server):
        _BoxHandler.mode = "short"
        spec = BlackBoxSpec(BlackBoxKind.HTTP, {"url": box_server})
        with pytest.raises(ProtocolError):
            query_batch(spec, [_x("a"), _x("b")])

    def test_garbage_is_protocol_error(self, box_server):
        _BoxHandler.mode = "garbage"
        spec = BlackBoxSpec(BlackBoxKind.HTTP, {"url": box_server})
        with pytest.raises(ProtocolError):
            query_batch(spec, [_x("a")])

    def test_http_error_is_failure(self, box_server):
        _BoxHandler.mode = "error"
        spec = BlackBoxSpec(BlackBoxKind.HTTP, {"url": box_server})
        with pytest.raises(BlackBoxFailureError):
            query_batch(spec, [_x("a")])

    def test_unreachable_is_failure(self):
        spec = BlackBoxSpec(BlackBoxKind.HTTP,
                            {"url": "http://127.0.0.1:1/nope"}, timeout=0.5)
        with pytest.raises(BlackBoxFailureError):
            query_batch(spec, [_x("a")])
