"""Model variants, hyper-parameter presets and search-range validation."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .masking import CtScheme


class ModelVariant(str, enum.Enum):
    SET = "SET"
    MAT = "MAT"
    HIER = "HIER"
    SET_PP = "SET++"
    HIER_PP = "HIER++"
    HIER_CLS = "HIER-CLS"
    HIER_JOINT = "HIER-Joint"

    @classmethod
    def parse(cls, name) -> "ModelVariant":
        if isinstance(name, ModelVariant):
            return name
        key = str(name).strip().upper().replace("_PP", "++").replace("_", "-")
        for v in cls:
            if v.value.upper() == key or v.name == str(name).strip().upper():
                return v
        raise ConfigError(f"unknown model variant {name!r}; expected one of {[v.value for v in cls]}")

    @property
    def act_conditioning(self) -> bool:
        return self in (ModelVariant.SET_PP, ModelVariant.HIER_PP, ModelVariant.HIER_CLS)

    @property
    def joint(self) -> bool:
        return self is ModelVariant.HIER_JOINT

    @property
    def uses_cls(self) -> bool:
        return self is ModelVariant.HIER_CLS

    @property
    def default_scheme(self) -> CtScheme:
        return CtScheme.HIER_CLS if self is ModelVariant.HIER_CLS else CtScheme.HIER


# (inclusive) ranges from the hyper-parameter search
SEARCH_BOUNDS = {
    "nhead": (2, 8),
    "embedding_perhead": (25, 40),
    "nhid_perhead": (10, 40),
    "nlayers_e1": (2, 6),
    "nlayers_e2": (2, 6),
    "nlayers_d": (2, 6),
    "dropout": (0.05, 0.8),
}


@dataclass
class HtEncoderConfig:
    m_shared: int
    n_context: int
    hidden: int
    heads: int
    embed: int
    ffn_inner: int
    dropout: float = 0.1
    ct_scheme: CtScheme = CtScheme.HIER
    pe_reinjection: bool = True

    def validate(self) -> None:
        if self.m_shared < 0 or self.n_context < 0 or self.m_shared + self.n_context < 1:
            raise ConfigError(f"need M, N >= 0 and M + N >= 1, got M={self.m_shared} N={self.n_context}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if min(self.hidden, self.embed, self.ffn_inner, self.heads) < 1:
            raise ConfigError("sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")


@dataclass
class ModelConfig:
    variant: ModelVariant = ModelVariant.HIER
    m_shared: int = 3
    n_context: int = 3
    n_decoder: int = 3
    hidden: int = 100
    heads: int = 4
    embed: int = 100
    ffn_inner: Optional[int] = None
    dropout: float = 0.1
    vocab_size: int = 1505
    act_dim: int = 44
    max_context_len: int = 512
    max_target_len: int = 64
    ct_scheme: Optional[CtScheme] = None
    pe_reinjection: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        self.variant = ModelVariant.parse(self.variant)
        if self.ct_scheme is None:
            self.ct_scheme = self.variant.default_scheme
        else:
            self.ct_scheme = CtScheme(self.ct_scheme)
        if self.ffn_inner is None:
            self.ffn_inner = 4 * self.hidden

    def encoder_config(self) -> HtEncoderConfig:
        return HtEncoderConfig(
            m_shared=self.m_shared,
            n_context=self.n_context,
            hidden=self.hidden,
            heads=self.heads,
            embed=self.embed,
            ffn_inner=self.ffn_inner,
            dropout=self.dropout,
            ct_scheme=self.ct_scheme,
            pe_reinjection=self.pe_reinjection,
        )

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def validate(self, strict_bounds: bool = False) -> None:
        self.encoder_config().validate()
        v = self.variant
        if v in (ModelVariant.SET, ModelVariant.SET_PP) and self.n_context != 0:
            raise ConfigError(f"{v.value} has no context encoder; n_context must be 0")
        if v is ModelVariant.MAT and (self.m_shared != 0 or self.ct_scheme is not CtScheme.HIER):
            raise ConfigError("MAT has no shared encoder (m_shared=0) and uses the HIER CT-Mask")
        if v is ModelVariant.HIER_CLS and self.ct_scheme is not CtScheme.HIER_CLS:
            raise ConfigError("HIER-CLS requires the HIER_CLS CT-Mask")
        if self.n_decoder < 1:
            raise ConfigError("need at least one decoder layer")
        if self.vocab_size < 6:
            raise ConfigError("vocabulary must hold the 5 reserved ids plus content")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype}")
        if strict_bounds:
            check_search_bounds(self)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        d["ct_scheme"] = self.ct_scheme.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def check_search_bounds(cfg: ModelConfig) -> None:
    """Reject configs outside the hyper-parameter search ranges."""
    problems = []

    def check(key, value):
        lo, hi = SEARCH_BOUNDS[key]
        if not lo <= value <= hi:
            problems.append(f"{key}={value:g} not in [{lo}, {hi}]")

    check("nhead", cfg.heads)
    check("embedding_perhead", cfg.embed / cfg.heads)
    check("nhid_perhead", cfg.hidden / cfg.heads)
    if cfg.m_shared:
        check("nlayers_e1", cfg.m_shared)
    if cfg.n_context:
        check("nlayers_e2", cfg.n_context)
    check("nlayers_d", cfg.n_decoder)
    check("dropout", cfg.dropout)
    if problems:
        raise ConfigError("outside search bounds: " + "; ".join(problems))


# L = shared/context/decoder layers, H hidden, A heads, E embedding
_TABLE = {
    ModelVariant.SET: (6, 0, 3, 100, 4, 100),
    ModelVariant.MAT: (0, 4, 6, 200, 5, 100),
    ModelVariant.HIER: (3, 3, 3, 100, 4, 100),
    ModelVariant.SET_PP: (4, 0, 3, 91, 7, 175),
    ModelVariant.HIER_PP: (4, 6, 3, 91, 7, 175),
    # not tabulated: HIER-CLS differs from HIER++ only in its CT-Mask; HIER-Joint reuses HIER
    ModelVariant.HIER_CLS: (4, 6, 3, 91, 7, 175),
    ModelVariant.HIER_JOINT: (3, 3, 3, 100, 4, 100),
}


def preset(variant, **overrides) -> ModelConfig:
    variant = ModelVariant.parse(variant)
    m, n, d, h, a, e = _TABLE[variant]
    base = dict(variant=variant, m_shared=m, n_context=n, n_decoder=d, hidden=h, heads=a, embed=e)
    base.update(overrides)
    return ModelConfig(**base)


def tiny(variant, **overrides) -> ModelConfig:
    """Smallest sensible config for a variant (gradient checks, smoke runs)."""
    variant = ModelVariant.parse(variant)
    m = 0 if variant is ModelVariant.MAT else 1
    n = 0 if variant in (ModelVariant.SET, ModelVariant.SET_PP) else 1
    base = dict(
        variant=variant, m_shared=m, n_context=n, n_decoder=1, hidden=8, heads=2,
        embed=8, ffn_inner=16, dropout=0.0, vocab_size=20, act_dim=6, max_context_len=64,
    )
    base.update(overrides)
    return ModelConfig(**base)


def desk(variant, **overrides) -> ModelConfig:
    """Single-CPU training size: one layer per stage, H=E=32, four heads, no dropout."""
    variant = ModelVariant.parse(variant)
    base = dict(hidden=32, heads=4, embed=32, ffn_inner=64, n_decoder=1, dropout=0.0, max_context_len=256)
    base.update(overrides)
    return tiny(variant, **base)
