"""Experiment configuration files.

One ``key = value`` pair per line; ``#`` starts a comment.  Key names are
lower-case and follow the classic ``$CFG_*`` vocabulary where one exists
(``wavfile_srate``, ``hmm_type``, ...).  Relative paths resolve against
the directory holding the config file.
"""

from dataclasses import dataclass, field
from pathlib import Path

from .decoder import DecodeConfig
from .errors import ConfigError
from .frontend import FrontendConfig

HMM_TYPES = {".cont.": "continuous", "continuous": "continuous", ".semi.": "semi",
             "semi": "semi", ".ptm.": "ptm", "ptm": "ptm"}


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text):
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return float("inf")
    if t in ("-inf", "-infinity"):
        return float("-inf")
    return float(t)


def _optional_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _schedule(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


# key -> (section, attribute, parser)
_KEYS = {
    "base_dir": ("exp", "base_dir", Path),
    "etc_dir": ("exp", "etc_dir", Path),
    "wav_dir": ("exp", "wav_dir", Path),
    "feat_dir": ("exp", "feat_dir", Path),
    "exp_dir": ("exp", "exp_dir", Path),
    "db_name": ("exp", "db_name", str),
    "wavfile_extension": ("exp", "wavfile_extension", str),
    "hmm_type": ("exp", "hmm_type", str),
    "mixture_schedule": ("exp", "mixture_schedule", _schedule),
    "cd_enabled": ("exp", "cd_enabled", _bool),
    "cd_min_count": ("exp", "cd_min_count", int),
    "iterations_per_stage": ("exp", "iterations_per_stage", int),
    "convergence_ratio": ("exp", "convergence_ratio", float),
    "lm_text": ("exp", "lm_text", Path),
    "lm_path": ("exp", "lm_path", Path),
    "lm_order": ("exp", "lm_order", int),
    "lm_smoothing": ("exp", "lm_smoothing", str),
    "lm_k": ("exp", "lm_k", float),
    "group_pattern": ("exp", "group_pattern", str),
    "variance_floor": ("exp", "variance_floor", float),
    "wavfile_srate": ("frontend", "sample_rate_hz", lambda t: int(float(t))),
    "preemphasis_coeff": ("frontend", "preemphasis_coeff", float),
    "window_ms": ("frontend", "window_ms", float),
    "overlap_ms": ("frontend", "overlap_ms", float),
    "use_hamming": ("frontend", "use_hamming", _bool),
    "zero_mean": ("frontend", "zero_mean_waveform", _bool),
    "cepstral_lifter": ("frontend", "cepstral_lifter", int),
    "num_cepstra": ("frontend", "num_cepstra", int),
    "num_filt": ("frontend", "num_mel_filters", int),
    "lower_freq": ("frontend", "mel_low_hz", float),
    "upper_freq": ("frontend", "mel_high_hz", float),
    "fft_size": ("frontend", "fft_size", int),
    "log_energy_floor": ("frontend", "log_energy_floor", float),
    "cepstral_mean_norm": ("frontend", "cepstral_mean_norm", _bool),
    "beam": ("decode", "beam_logwidth", _float),
    "language_weight": ("decode", "language_weight", float),
    "word_insertion_penalty": ("decode", "word_insertion_penalty", _float),
    "filler_insertion_penalty": ("decode", "filler_insertion_penalty", _float),
    "silence_insertion_penalty": ("decode", "silence_insertion_penalty", _float),
    "max_active": ("decode", "max_active", _optional_int),
}


@dataclass
class ExperimentConfig:
    base_dir: Path = Path(".")
    etc_dir: Path = Path("etc")
    wav_dir: Path = Path("wav")
    feat_dir: Path = Path("feat")
    exp_dir: Path = Path("exp")
    db_name: str = "toy"
    wavfile_extension: str = "wav"
    hmm_type: str = "continuous"
    mixture_schedule: tuple = (1, 2, 4, 8)
    cd_enabled: bool = True
    cd_min_count: int = 3
    iterations_per_stage: int = 8
    convergence_ratio: float = 1e-4
    lm_text: Path = None
    lm_path: Path = None
    lm_order: int = 3
    lm_smoothing: str = "laplace"
    lm_k: float = 1.0
    group_pattern: str = r"^([^_]+)_"
    variance_floor: float = 1e-4
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        kind = HMM_TYPES.get(self.hmm_type)
        if kind is None:
            raise ConfigError(f"hmm_type {self.hmm_type!r} is unknown; use 'continuous' (.cont.)")
        if kind != "continuous":
            raise ConfigError(f"hmm_type {self.hmm_type!r} is not supported: only continuous "
                              "mixture models are implemented (semi-continuous and "
                              "phonetically-tied models are out of scope)")
        self.hmm_type = "continuous"
        sched = tuple(self.mixture_schedule)
        if not sched or sched[0] != 1 or any(b != 2 * a for a, b in zip(sched, sched[1:])) or sched[-1] > 8:
            raise ConfigError(f"mixture_schedule {sched} must be a doubling chain from 1 up to at most 8")
        if self.iterations_per_stage < 1:
            raise ConfigError("iterations_per_stage must be >= 1")
        if self.cd_min_count < 1:
            raise ConfigError("cd_min_count must be >= 1")
        if self.lm_order not in (1, 2, 3):
            raise ConfigError("lm_order must be 1, 2 or 3")
        if self.lm_smoothing not in ("laplace", "additive", "interpolated"):
            raise ConfigError(f"lm_smoothing {self.lm_smoothing!r} is unknown")
        if self.frontend.sample_rate_hz != 16000:
            raise ConfigError(f"wavfile_srate {self.frontend.sample_rate_hz} is not supported; expected 16000")

    def path(self, p):
        """Resolve ``p`` against ``base_dir``."""
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def lm_text_path(self):
        return self.path(self.lm_text or Path(self.etc_dir) / f"{self.db_name}.lmtext")

    @property
    def lm_file(self):
        return self.path(self.lm_path or Path(self.exp_dir) / "lm" / f"{self.db_name}.arpa")


def parse_config(text, source="<config>", base_dir=None):
    """Build an :class:`ExperimentConfig` from ``key = value`` lines."""
    values = {"exp": {}, "frontend": {}, "decode": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower().lstrip("$")
        if key.startswith("cfg_"):
            key = key[4:]
        value = value.rstrip(";").strip().strip("'\"")
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        section, attr, conv = _KEYS[key]
        try:
            values[section][attr] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    rate = values["frontend"].get("sample_rate_hz", 16000)
    if rate != 16000:
        raise ConfigError(f"{source}: wavfile_srate {rate} is not supported; expected 16000")
    try:
        front = FrontendConfig(**values["frontend"])
        dec = DecodeConfig(**values["decode"])
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    exp = values["exp"]
    if base_dir is not None and "base_dir" not in exp:
        exp["base_dir"] = Path(base_dir)
    elif base_dir is not None and not Path(exp["base_dir"]).is_absolute():
        exp["base_dir"] = Path(base_dir) / exp["base_dir"]
    return ExperimentConfig(frontend=front, decode=dec, **exp)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse_config(text, str(path), base_dir=path.parent)


def format_config(cfg):
    """Inverse of :func:`parse_config` for every recognised key."""
    lines = []
    for key, (section, attr, _) in _KEYS.items():
        obj = cfg if section == "exp" else getattr(cfg, section)
        value = getattr(obj, attr)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

