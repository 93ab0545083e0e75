"""Training configuration and the flat ``key = value`` config-file format.

Parsing is total: every key is typed, unknown keys are rejected by name, and
anything unspecified takes the documented default. The same format serves
domain-spec files.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .data import DomainSpec
from .errors import ContractViolation, ParseError


@dataclass
class TrainConfig:
    # loop
    n_iter: int = 3000
    iter_dist: int = -1  # -1: 10% of n_iter
    batch_source: int = 64
    batch_target: int = 64
    seed: int = 0
    # network
    encoder_hidden: tuple[int, ...] = (64, 64)
    proj_hidden: int = 64
    proj_dim: int = 64
    # class mixtures
    n_components: int = 5
    sinkhorn_iters: int = 10
    gmm_momentum: float = 0.999
    variance_floor: float = 1e-4
    source_memory_capacity: int = 2048
    memory_per_batch_cap: int = 100
    # target bank / prototypes
    target_bank_capacity: int = 1024
    target_bank_top_k: int = 16
    proto_mean_mode: str = "bank-mean"  # or "batch-mean"
    # EMA factors
    alpha: float = 0.9  # priors and target prototypes
    teacher_beta: float = 0.999
    # losses
    tau: float = 0.1
    beta_conf: float = 0.968
    lambda_contrast: float = 1.0
    use_target_ce: bool = True
    # optimizer
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 0.01
    warmup_iters: int = 100
    # sampling
    rcs_temperature: float = 0.5

    @property
    def resolved_iter_dist(self) -> int:
        return self.iter_dist if self.iter_dist >= 0 else self.n_iter // 10

    def loss_config(self):
        from .losses import LossConfig

        return LossConfig(tau=self.tau, beta_conf=self.beta_conf, lambda_contrast=self.lambda_contrast)

    def validate(self, n_classes: int | None = None) -> None:
        if self.n_iter < 0:
            raise ContractViolation("n_iter must be >= 0")
        if self.n_iter > 0 and not self.resolved_iter_dist < self.n_iter:
            raise ContractViolation("iter_dist must be < n_iter")
        if n_classes is not None and (self.batch_source < n_classes or self.batch_target < n_classes):
            raise ContractViolation("batch sizes must be >= number of classes")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolation("alpha must lie in [0, 1]")
        if not 0.0 < self.teacher_beta <= 1.0:
            raise ContractViolation("teacher_beta must lie in (0, 1]")
        if not 0.0 <= self.gmm_momentum <= 1.0:
            raise ContractViolation("gmm_momentum must lie in [0, 1]")
        self.loss_config()  # tau/beta_conf/lambda invariants live on LossConfig
        if self.proto_mean_mode not in ("bank-mean", "batch-mean"):
            raise ContractViolation("proto_mean_mode must be 'bank-mean' or 'batch-mean'")
        if self.rcs_temperature <= 0:
            raise ContractViolation("rcs_temperature must be positive")


# -- typed flat key=value parsing ------------------------------------------


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip() != "")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip() != "")


def _str(s: str) -> str:
    return s


_TRAIN_PARSERS = {
    "n_iter": _int,
    "iter_dist": _int,
    "batch_source": _int,
    "batch_target": _int,
    "seed": _int,
    "encoder_hidden": _ints,
    "proj_hidden": _int,
    "proj_dim": _int,
    "n_components": _int,
    "sinkhorn_iters": _int,
    "gmm_momentum": _float,
    "variance_floor": _float,
    "source_memory_capacity": _int,
    "memory_per_batch_cap": _int,
    "target_bank_capacity": _int,
    "target_bank_top_k": _int,
    "proto_mean_mode": _str,
    "alpha": _float,
    "teacher_beta": _float,
    "tau": _float,
    "beta_conf": _float,
    "lambda_contrast": _float,
    "use_target_ce": _bool,
    "lr": _float,
    "adam_beta1": _float,
    "adam_beta2": _float,
    "weight_decay": _float,
    "warmup_iters": _int,
    "rcs_temperature": _float,
}

_SPEC_PARSERS = {
    "n_classes": _int,
    "input_dim": _int,
    "modes_per_class": _int,
    "n_samples": _int,
    "seed": _int,
    "rotation_deg": _float,
    "translation": _floats,
    "scale": _float,
    "label_shift": _floats,
    "mode_spread": _float,
    "within_class_spread": _float,
    "mode_scale": _float,
}


def parse_kv_lines(text: str) -> dict[str, str]:
    """Split ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", line=lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        out[key] = value
    return out


def _parse_typed(text: str, parsers: dict, kind: str) -> dict:
    values = {}
    for key, raw in parse_kv_lines(text).items():
        if key not in parsers:
            raise ParseError(f"unknown {kind} key {key!r}")
        try:
            values[key] = parsers[key](raw)
        except ValueError as exc:
            raise ParseError(f"bad value for {key!r}: {exc}") from None
    return values


def parse_train_config(text: str) -> TrainConfig:
    return TrainConfig(**_parse_typed(text, _TRAIN_PARSERS, "config"))


def parse_domain_spec(text: str) -> DomainSpec:
    return DomainSpec(**_parse_typed(text, _SPEC_PARSERS, "domain-spec"))


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["encoder_hidden"] = list(cfg.encoder_hidden)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    kwargs = dict(d)
    if "encoder_hidden" in kwargs:
        kwargs["encoder_hidden"] = tuple(kwargs["encoder_hidden"])
    return TrainConfig(**kwargs)


def config_defaults_help() -> str:
    """One line per config key with its default, for --help output."""
    defaults = TrainConfig()
    lines = []
    for f in fields(TrainConfig):
        val = getattr(defaults, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"  {f.name} = {val}")
    return "\n".join(lines)
