"""Configuration objects shared by the library and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

VARIANTS = ("proposed", "crgan", "nubpr_o", "nubpr_no")
ADVERSARIAL_MODES = ("nonsaturating", "saturating")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


@dataclass
class OptimizerConfig:
    """Adam hyperparameters plus the shared network settings.

    ``hidden_multiplier`` sizes every hidden layer as a multiple of the
    net's output layer; all nets have exactly one hidden layer.
    """

    initial_lr: float = 0.1
    l2_lambda: float = 0.0
    gan_l2: float = 1e-3
    dropout: float = 0.4
    hidden_multiplier: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if not self.initial_lr > 0:
            raise ConfigError("initial_lr must be > 0")
        if self.l2_lambda < 0 or self.gan_l2 < 0:
            raise ConfigError("l2_lambda and gan_l2 must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.hidden_multiplier < 1:
            raise ConfigError("hidden_multiplier must be >= 1")


@dataclass
class SynthSpec:
    """Shape and knobs of the synthetic cross-network dataset.

    Users are mixtures of ``archetypes`` topic profiles that drift slowly
    over intervals.  Source-network vectors are a fixed column-stochastic
    permutation-plus-mixing map of the target vectors, perturbed by
    ``mapping_noise``, so a learnable target-to-source mapping exists by
    construction.
    """

    users: int = 200
    items: int = 500
    topics: int = 16
    intervals: int = 24
    archetypes: int = 6
    interactions_min: int = 1
    interactions_max: int = 4
    overlap: float = 0.5
    popularity_skew: float = 0.2
    mapping_noise: float = 0.01
    target_noise: float = 0.35
    drift: float = 0.04
    mixing: float = 0.3

    def validate(self) -> None:
        if self.users < 1:
            raise ConfigError("users must be >= 1")
        if self.items < 1:
            raise ConfigError("items must be >= 1")
        if self.topics < 2:
            raise ConfigError("topics must be >= 2")
        if self.intervals < 2:
            raise ConfigError("intervals must be >= 2")
        if self.archetypes < 1:
            raise ConfigError("archetypes must be >= 1")
        if not 0 <= self.interactions_min <= self.interactions_max:
            raise ConfigError("need 0 <= interactions_min <= interactions_max")
        if self.interactions_max > self.items:
            raise ConfigError("interactions_max cannot exceed the number of items")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError("overlap must lie in [0, 1]")
        for name in ("mapping_noise", "target_noise", "drift", "popularity_skew"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.mixing <= 1.0:
            raise ConfigError("mixing must lie in [0, 1]")


@dataclass
class TrainConfig:
    """Training, protocol and evaluation settings for one run."""

    variant: str = "proposed"
    encoding_dim: int = 32
    latent_dim: int = 32
    offline_epochs: int = 60
    online_iters: int = 15
    offline_cut: int | None = None  # None resolves to floor(2T/3)
    content_weight: float = 1.0
    adversarial: str = "nonsaturating"
    per_item_triplets: int = 8
    gan_batch: int = 128
    top_n: tuple[int, ...] = (5, 10, 20)
    tbknn_k: tuple[int, ...] = (4, 10, 20, 30, 40, 50)
    exclude_prev: bool = True
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.adversarial not in ADVERSARIAL_MODES:
            raise ConfigError(f"adversarial must be one of {ADVERSARIAL_MODES}")
        if self.encoding_dim < 1 or self.latent_dim < 1:
            raise ConfigError("encoding_dim and latent_dim must be >= 1")
        if self.offline_epochs < 1:
            raise ConfigError("offline_epochs must be >= 1")
        if self.online_iters < 1:
            raise ConfigError("online_iters must be >= 1")
        if self.content_weight < 0:
            raise ConfigError("content_weight must be >= 0")
        if self.per_item_triplets < 1:
            raise ConfigError("per_item_triplets must be >= 1")
        if self.gan_batch < 1:
            raise ConfigError("gan_batch must be >= 1")
        if not self.top_n or any(n < 1 for n in self.top_n):
            raise ConfigError("top_n must be a nonempty list of positive ints")
        if not self.tbknn_k or any(k < 1 for k in self.tbknn_k):
            raise ConfigError("tbknn_k must be a nonempty list of positive ints")
        self.optimizer.validate()

    def resolved_cut(self, num_intervals: int) -> int:
        cut = self.offline_cut if self.offline_cut is not None else (2 * num_intervals) // 3
        if not 0 < cut < num_intervals:
            raise ConfigError(f"offline_cut must lie in (0, {num_intervals}), got {cut}")
        return cut

    def uses_gan(self) -> bool:
        return self.variant in ("proposed", "crgan")


def config_fields() -> dict[str, tuple[type, str]]:
    """Flat key registry: name -> (owning config class, field name)."""
    reg: dict[str, tuple[type, str]] = {}
    for cls in (SynthSpec, TrainConfig, OptimizerConfig):
        for f in fields(cls):
            if f.name == "optimizer":
                continue
            key = f.name if f.name != "initial_lr" else "lr"
            reg[key] = (cls, f.name)
    return reg
