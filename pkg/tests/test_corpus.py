from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from miniasr.corpus import (
    CorpusManifest,
    FillerDictionary,
    PhoneSet,
    PronunciationDictionary,
    TranscriptSet,
    count_nonspeech,
    format_dictionary,
    format_fileids,
    format_transcriptions,
    load_manifest,
    parse_dictionary,
    parse_fileids,
    parse_fillers,
    parse_phones,
    parse_transcriptions,
    validate_corpus,
    write_manifest,
)
from miniasr.errors import ParseError, UnknownPhone

PHONES = PhoneSet(("SIL", "A", "B", "C", "FP"))


def _manifest(train_lines, fileids=None, test=()):
    train = parse_transcriptions("\n".join(train_lines))
    train.fileids = list(fileids) if fileids is not None else train.ids()
    test_ts = TranscriptSet(list(test), [u for u, _ in test])
    return CorpusManifest(PHONES, parse_dictionary("ABC A B C\nBA B A\n"),
                          FillerDictionary({"++FP++": "FP"}), train, test_ts)


class TestParsers:
    def test_dictionary_entry(self):
        d = parse_dictionary("ABC A B C\n")
        assert d["ABC"] == [("A", "B", "C")]

    def test_dictionary_alternatives_in_order(self):
        d = parse_dictionary("ABC(2) A B\nABC A B C\n")
        assert d["ABC"] == [("A", "B", "C"), ("A", "B")]

    def test_dictionary_missing_phones(self):
        with pytest.raises(ParseError) as exc:
            parse_dictionary("ABC A B\nABC\n")
        assert exc.value.line == 2

    def test_dictionary_unknown_phone(self):
        with pytest.raises(UnknownPhone, match="Q"):
            parse_dictionary("ABQ A B Q\n", phone_set=PHONES)

    def test_transcription_line(self):
        ts = parse_transcriptions("HELLO ++FP++ WORLD (u001)\n")
        assert ts.utterances == [("u001", ["HELLO", "++FP++", "WORLD"])]

    def test_transcription_empty_utterance(self):
        assert parse_transcriptions("(u002)\n").utterances == [("u002", [])]

    def test_transcription_missing_id(self):
        with pytest.raises(ParseError, match="utterance_id"):
            parse_transcriptions("HELLO WORLD\n")

    def test_phones_and_fillers(self):
        ps = parse_phones("# phones\nSIL\nA\n")
        assert tuple(ps) == ("SIL", "A")
        with pytest.raises(ParseError):
            parse_phones("A\n")
        with pytest.raises(ParseError):
            parse_phones("SIL\nA\nA\n")
        fd = parse_fillers("++FP++ FP\n# breath\n++BR++ BR\n")
        assert fd.entries == {"++FP++": "FP", "++BR++": "BR"}
        with pytest.raises(ParseError):
            parse_fillers("FP FP\n")


words = st.text(alphabet="ABCDE", min_size=1, max_size=5)


class TestRoundTrip:
    @settings(max_examples=60)
    @given(st.dictionaries(words, st.lists(st.lists(st.sampled_from("ABC"), min_size=1, max_size=4),
                                           min_size=1, max_size=3), max_size=6))
    def test_dictionary_fixpoint(self, entries):
        d = PronunciationDictionary({w: [tuple(p) for p in prons] for w, prons in entries.items()})
        again = parse_dictionary(format_dictionary(d))
        assert again.entries == d.entries
        assert format_dictionary(again) == format_dictionary(d)

    @settings(max_examples=60)
    @given(st.lists(st.lists(st.sampled_from(["AB", "C", "++FP++"]), max_size=5), max_size=6))
    def test_transcription_fixpoint(self, utts):
        ts = TranscriptSet([(f"u{i}", toks) for i, toks in enumerate(utts)])
        again = parse_transcriptions(format_transcriptions(ts))
        assert again.utterances == ts.utterances

    def test_fileids_and_manifest_files(self, tmp_path):
        assert parse_fileids(format_fileids(["a/b", "c"])) == ["a/b", "c"]
        m = _manifest(["ABC (u1)", "BA ++FP++ (u2)"], test=[("u3", ["ABC"])])
        write_manifest(m, tmp_path, "db")
        back = load_manifest(tmp_path, "db")
        assert back.train.utterances == m.train.utterances
        assert back.dictionary.entries == m.dictionary.entries
        assert back.fillers.entries == m.fillers.entries


class TestValidation:
    def test_clean(self):
        report = validate_corpus(_manifest(["ABC (u1)", "BA ++FP++ (u2)"]))
        assert report.is_clean and report.findings == []

    def test_out_of_dictionary(self):
        report = validate_corpus(_manifest(["ABC QQQ (u1)"]))
        [f] = report.findings
        assert f.category == "out_of_dictionary" and f.token == "QQQ" and f.utterance_id == "u1"
        assert "QQQ" in f.message and "u1" in f.message

    def test_fileid_count_mismatch(self):
        report = validate_corpus(_manifest(["ABC (u1)", "BA (u2)"], fileids=["u1", "u2", "u3"]))
        assert len(report.findings) == 1
        assert report.findings[0].category == "fileid_mismatch"

    def test_empty_utterance_is_warning(self):
        report = validate_corpus(_manifest(["(u1)"]))
        assert report.is_clean and [f.category for f in report.warnings] == ["empty_utterance"]

    def test_unknown_filler_reported(self):
        report = validate_corpus(_manifest(["ABC ++XX++ (u1)"]))
        assert [f.category for f in report.errors] == ["unknown_filler"]

    def test_split_overlap_and_missing_audio(self, tmp_path):
        m = _manifest(["ABC (u1)"], test=[("u1", ["BA"])])
        m.wav_dir = tmp_path
        report = validate_corpus(m, check_audio=True)
        cats = Counter(f.category for f in report.errors)
        assert cats["split_overlap"] == 1 and cats["missing_audio"] == 2

    def test_idempotent(self):
        m = _manifest(["ABC QQQ (u1)", "(u2)"])
        assert validate_corpus(m) == validate_corpus(m)


class TestNonSpeechCounts:
    def test_two_filled_pauses(self):
        ts = parse_transcriptions("A ++FP++ (u1)\n++FP++ B (u2)\n")
        assert count_nonspeech(ts) == {"++FP++": 2}

    def test_against_naive_scan(self):
        rng = np.random.default_rng(0)
        vocab = ["AB", "C", "++FP++", "++BR++", "++HES++", "++LP++"]
        lines = []
        for i in range(50):
            toks = [vocab[j] for j in rng.integers(0, len(vocab), size=rng.integers(0, 8))]
            lines.append(" ".join(toks + [f"(u{i})"]))
        text = "\n".join(lines)
        naive = {}
        for line in text.splitlines():
            for tok in line.split()[:-1]:
                if tok.startswith("++") and tok.endswith("++"):
                    naive[tok] = naive.get(tok, 0) + 1
        assert count_nonspeech(parse_transcriptions(text)) == naive
