"""Corpus inventory: phone set, dictionaries, file-id lists and transcriptions.

File layout for a corpus called ``name``::

    name.dic                  WORD PH1 PH2 ...   (alternatives as WORD(2) ...)
    name.phone                one phone per line
    name.filler               ++TAG++ PHONE
    name_train.fileids        relative audio path without extension
    name_train.transcription  TOKEN ... (utterance_id)
    name_test.fileids / name_test.transcription
"""

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .errors import ParseError, UnknownPhone

SIL = "SIL"
_ALT_RE = re.compile(r"^(?P<word>.+)\((?P<index>\d+)\)$")
_TRANS_RE = re.compile(r"^(?P<body>.*?)\s*\((?P<id>[^()\s]+)\)\s*$")


def is_filler_token(token):
    return len(token) > 4 and token.startswith("++") and token.endswith("++")


def _content_lines(text, comments=False):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or (comments and line.startswith("#")):
            continue
        yield lineno, line


@dataclass(frozen=True)
class PhoneSet:
    phones: tuple

    def __post_init__(self):
        if len(set(self.phones)) != len(self.phones):
            dup = [p for p, c in Counter(self.phones).items() if c > 1]
            raise ParseError(f"duplicate phones: {' '.join(dup)}")
        if SIL not in self.phones:
            raise ParseError("phone set lacks the silence phone SIL")

    def __contains__(self, phone):
        return phone in self.phones

    def __iter__(self):
        return iter(self.phones)

    def __len__(self):
        return len(self.phones)


@dataclass
class PronunciationDictionary:
    """word -> list of pronunciations (tuples of phones), alternative order kept."""

    entries: dict = field(default_factory=dict)

    def __contains__(self, word):
        return word in self.entries

    def __getitem__(self, word):
        return self.entries[word]

    def __len__(self):
        return len(self.entries)

    def words(self):
        return list(self.entries)

    def phones(self):
        return {ph for prons in self.entries.values() for pron in prons for ph in pron}

    def validate(self, phone_set):
        for word, prons in self.entries.items():
            for pron in prons:
                missing = [ph for ph in pron if ph not in phone_set]
                if missing:
                    raise UnknownPhone(f"{word}: phones not in phone set: {' '.join(missing)}")


@dataclass
class FillerDictionary:
    entries: dict = field(default_factory=dict)

    def __contains__(self, token):
        return token in self.entries

    def __getitem__(self, token):
        return self.entries[token]

    def __len__(self):
        return len(self.entries)

    def phones(self):
        return set(self.entries.values())


@dataclass
class TranscriptSet:
    utterances: list = field(default_factory=list)  # (utterance_id, [tokens])
    fileids: list = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)

    def ids(self):
        return [uid for uid, _ in self.utterances]

    def tokens(self, uid):
        for u, toks in self.utterances:
            if u == uid:
                return toks
        raise KeyError(uid)

    def fileid_map(self):
        """utterance_id -> fileid, pairing the two lists by position."""
        return {uid: fid for (uid, _), fid in zip(self.utterances, self.fileids)}


@dataclass
class CorpusManifest:
    phone_set: PhoneSet
    dictionary: PronunciationDictionary
    fillers: FillerDictionary
    train: TranscriptSet
    test: TranscriptSet
    wav_dir: Path = Path("wav")
    feat_dir: Path = Path("feat")
    wav_extension: str = "wav"
    feat_extension: str = "mfc"

    def wav_path(self, fileid):
        return Path(self.wav_dir) / f"{fileid}.{self.wav_extension}"

    def feat_path(self, fileid):
        return Path(self.feat_dir) / f"{fileid}.{self.feat_extension}"


# ---------------------------------------------------------------------------
# Parsers


def parse_phones(text, source=None):
    phones = []
    for lineno, line in _content_lines(text, comments=True):
        parts = line.split()
        if len(parts) != 1:
            raise ParseError("expected one phone per line", lineno, source)
        if parts[0] in phones:
            raise ParseError(f"duplicate phone {parts[0]}", lineno, source)
        phones.append(parts[0])
    return PhoneSet(tuple(phones))


def parse_dictionary(text, phone_set=None, source=None):
    """Parse ``WORD PH1 PH2 ...`` lines; ``WORD(n)`` marks the n-th alternative."""
    staged = {}
    for lineno, line in _content_lines(text):
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"entry {parts[0]!r} has no phones", lineno, source)
        head, pron = parts[0], tuple(parts[1:])
        m = _ALT_RE.match(head)
        word, index = (m["word"], int(m["index"])) if m else (head, 1)
        if index < 1:
            raise ParseError(f"bad alternative index in {head!r}", lineno, source)
        slots = staged.setdefault(word, {})
        if index in slots:
            raise ParseError(f"duplicate entry {head!r}", lineno, source)
        if phone_set is not None:
            missing = [ph for ph in pron if ph not in phone_set]
            if missing:
                raise UnknownPhone(
                    f"{source + ':' if source else ''}{lineno}: {head}: unknown phones {' '.join(missing)}"
                )
        slots[index] = pron
    return PronunciationDictionary({w: [slots[i] for i in sorted(slots)] for w, slots in staged.items()})


def parse_fillers(text, source=None):
    entries = {}
    for lineno, line in _content_lines(text, comments=True):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '++TAG++ PHONE'", lineno, source)
        token, phone = parts
        if not is_filler_token(token):
            raise ParseError(f"filler token {token!r} must look like ++TAG++", lineno, source)
        if token in entries:
            raise ParseError(f"duplicate filler {token}", lineno, source)
        entries[token] = phone
    return FillerDictionary(entries)


def parse_fileids(text, source=None):
    ids = []
    for lineno, line in _content_lines(text):
        if len(line.split()) != 1:
            raise ParseError("expected one file id per line", lineno, source)
        ids.append(line)
    return ids


def parse_transcriptions(text, source=None):
    """Parse ``TOKEN ... (utterance_id)`` lines into ``[(id, tokens)]``."""
    utterances = []
    for lineno, line in _content_lines(text):
        m = _TRANS_RE.match(line)
        if m is None:
            raise ParseError("missing trailing (utterance_id)", lineno, source)
        utterances.append((m["id"], m["body"].split()))
    return TranscriptSet(utterances)


# ---------------------------------------------------------------------------
# Serialisation


def format_phones(phone_set):
    return "".join(f"{p}\n" for p in phone_set)


def format_dictionary(dictionary):
    lines = []
    for word, prons in dictionary.entries.items():
        for i, pron in enumerate(prons, start=1):
            head = word if i == 1 else f"{word}({i})"
            lines.append(f"{head} {' '.join(pron)}\n")
    return "".join(lines)


def format_fillers(fillers):
    return "".join(f"{tok} {ph}\n" for tok, ph in fillers.entries.items())


def format_fileids(fileids):
    return "".join(f"{f}\n" for f in fileids)


def format_transcription_line(uid, tokens):
    body = " ".join(tokens)
    return f"{body} ({uid})\n" if body else f"({uid})\n"


def format_transcriptions(ts):
    return "".join(format_transcription_line(uid, toks) for uid, toks in ts.utterances)


# ---------------------------------------------------------------------------
# Loading


def corpus_paths(etc_dir, name):
    etc = Path(etc_dir)
    return {
        "dic": etc / f"{name}.dic",
        "phone": etc / f"{name}.phone",
        "filler": etc / f"{name}.filler",
        "train_fileids": etc / f"{name}_train.fileids",
        "train_transcription": etc / f"{name}_train.transcription",
        "test_fileids": etc / f"{name}_test.fileids",
        "test_transcription": etc / f"{name}_test.transcription",
    }


def _read(path):
    return Path(path).read_text(encoding="utf-8")


def load_transcript_set(fileids_path, transcription_path):
    ts = parse_transcriptions(_read(transcription_path), source=str(transcription_path))
    ts.fileids = parse_fileids(_read(fileids_path), source=str(fileids_path))
    return ts


def load_manifest(etc_dir, name, wav_dir="wav", feat_dir="feat", wav_extension="wav"):
    p = corpus_paths(etc_dir, name)
    phone_set = parse_phones(_read(p["phone"]), source=str(p["phone"]))
    return CorpusManifest(
        phone_set=phone_set,
        dictionary=parse_dictionary(_read(p["dic"]), source=str(p["dic"])),
        fillers=parse_fillers(_read(p["filler"]), source=str(p["filler"])),
        train=load_transcript_set(p["train_fileids"], p["train_transcription"]),
        test=load_transcript_set(p["test_fileids"], p["test_transcription"]),
        wav_dir=Path(wav_dir),
        feat_dir=Path(feat_dir),
        wav_extension=wav_extension,
    )


def write_manifest(manifest, etc_dir, name):
    p = corpus_paths(etc_dir, name)
    Path(etc_dir).mkdir(parents=True, exist_ok=True)
    p["phone"].write_text(format_phones(manifest.phone_set), encoding="utf-8")
    p["dic"].write_text(format_dictionary(manifest.dictionary), encoding="utf-8")
    p["filler"].write_text(format_fillers(manifest.fillers), encoding="utf-8")
    for split in ("train", "test"):
        ts = getattr(manifest, split)
        p[f"{split}_fileids"].write_text(format_fileids(ts.fileids), encoding="utf-8")
        p[f"{split}_transcription"].write_text(format_transcriptions(ts), encoding="utf-8")
    return p


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Finding:
    category: str
    message: str
    severity: str = "error"
    utterance_id: str = None
    token: str = None


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def errors(self):
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self):
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def is_clean(self):
        return not self.errors

    def by_category(self, category):
        return [f for f in self.findings if f.category == category]

    def render(self):
        if not self.findings:
            return "corpus is clean\n"
        return "".join(f"{f.severity}: [{f.category}] {f.message}\n" for f in self.findings)


def _check_split(manifest, split, ts, findings, check_audio, check_features):
    add = findings.append
    if len(ts.fileids) != len(ts.utterances):
        add(Finding("fileid_mismatch",
                    f"{split}: {len(ts.fileids)} fileids but {len(ts.utterances)} transcriptions"))
    for (uid, _), fid in zip(ts.utterances, ts.fileids):
        if PurePosixPath(fid).name != uid:
            add(Finding("fileid_mismatch", f"{split}: fileid {fid} does not match utterance {uid}",
                        utterance_id=uid))
    seen = set()
    for uid, tokens in ts.utterances:
        if uid in seen:
            add(Finding("duplicate_id", f"{split}: utterance id {uid} repeated", utterance_id=uid))
        seen.add(uid)
        if not tokens:
            add(Finding("empty_utterance", f"{split}: utterance {uid} has no tokens",
                        severity="warning", utterance_id=uid))
        for tok in tokens:
            if is_filler_token(tok):
                if tok not in manifest.fillers:
                    add(Finding("unknown_filler", f"{split}: {uid}: filler {tok} not in filler list",
                                utterance_id=uid, token=tok))
            elif tok not in manifest.dictionary:
                add(Finding("out_of_dictionary", f"{split}: {uid}: token {tok} not in dictionary",
                            utterance_id=uid, token=tok))
    for fid in ts.fileids:
        if check_audio and not manifest.wav_path(fid).is_file():
            add(Finding("missing_audio", f"{split}: missing audio {manifest.wav_path(fid)}"))
        if check_features and not manifest.feat_path(fid).is_file():
            add(Finding("missing_features", f"{split}: missing features {manifest.feat_path(fid)}"))


def validate_corpus(manifest, check_audio=False, check_features=False):
    """Collect every consistency problem in ``manifest``; never raises."""
    findings = []
    phones = manifest.phone_set
    for word, prons in manifest.dictionary.entries.items():
        for pron in prons:
            for ph in pron:
                if ph not in phones:
                    findings.append(Finding("unknown_phone", f"dictionary: {word}: phone {ph} not in phone set",
                                            token=ph))
    word_phones = manifest.dictionary.phones()
    for tok, ph in manifest.fillers.entries.items():
        if ph not in phones:
            findings.append(Finding("unknown_phone", f"filler {tok}: phone {ph} not in phone set", token=ph))
        if ph != SIL and ph in word_phones:
            findings.append(Finding("filler_phone_overlap",
                                    f"filler {tok}: phone {ph} is also used by dictionary words", token=ph))
    _check_split(manifest, "train", manifest.train, findings, check_audio, check_features)
    _check_split(manifest, "test", manifest.test, findings, check_audio, check_features)
    overlap = sorted(set(manifest.train.ids()) & set(manifest.test.ids()))
    for uid in overlap:
        findings.append(Finding("split_overlap", f"utterance {uid} is in both train and test",
                                utterance_id=uid))
    return ValidationReport(findings)


def count_nonspeech(ts):
    """Occurrence count of every filler token across ``ts``."""
    counts = Counter()
    for _, tokens in ts.utterances:
        counts.update(t for t in tokens if is_filler_token(t))
    return dict(counts)
