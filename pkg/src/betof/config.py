"""Harness configuration: defaults plus TOML-file overrides.

Keys carry explicit units in their names (t_m_ns, tau_ns, ...) so config
files stay self-describing and diff-able.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .coding import LossWeights
from .errors import ConfigurationError
from .learn import TrainConfig
from .physics import AttenuationModel, NoiseModel, TimingConfig


@dataclass
class ExperimentPlan:
    buckets: list = field(default_factory=lambda:
                          [(0.0, 3.0), (30.0, 33.0), (60.0, 63.0), (90.0, 93.0)])
    snr_levels: list = field(default_factory=lambda: [5.23, 3.68, 2.22])
    methods: list = field(default_factory=lambda:
                          ["single-freq", "dual-freq-sine", "dual-freq-square",
                           "lookup-learned", "mlp-learned", "lookup-square"])
    scenes_per_cell: int = 3
    width: int = 64
    height: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.snr_levels:
            raise ConfigurationError("plan needs at least one SNR level")
        if self.scenes_per_cell < 1:
            raise ConfigurationError("scenes_per_cell must be >= 1")
        spans = sorted(tuple(b) for b in self.buckets)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ConfigurationError(
                    f"plan buckets overlap: [{a0},{a1}] and [{b0},{b1}]")


@dataclass
class HarnessConfig:
    timing: TimingConfig = field(default_factory=TimingConfig)
    noise: NoiseModel = field(default_factory=lambda:
                              NoiseModel(dark_expectation=1000.0,
                                         readout_sigma=20.0))
    att: AttenuationModel = field(default_factory=AttenuationModel)
    plan: ExperimentPlan = field(default_factory=ExperimentPlan)
    train: TrainConfig = field(default_factory=lambda:
                               TrainConfig(optimizer="adam", lr=2e-3,
                                           code_lr=0.05, finetune_epochs=10))
    hidden: tuple = (64, 64)
    k: int = 4
    # baseline AMCW modulation frequencies
    single_freq_hz: float = 15e6
    dual_freq_low_hz: float = 1e6
    dual_freq_high_hz: float = 15e6
    lookup_grid_step_m: float = 0.01
    # window-relative depth band used for training scenes; the learned codes
    # and decoder transfer to any bucket by shifting tau
    train_bucket: tuple = (30.0, 33.0)
    ambient_level: float = 0.05


def _take(section, key, default):
    return section.get(key, default) if section else default


def load_config(path=None, seed=None) -> HarnessConfig:
    """Build a HarnessConfig from defaults overridden by a TOML file."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from None

    t = raw.get("timing", {})
    timing = TimingConfig(
        T_burst=_take(t, "t_burst_us", 5.0) * 1e-6,
        T_m=_take(t, "t_m_ns", 50.0) * 1e-9,
        tau=_take(t, "tau_ns", 0.0) * 1e-9,
        pulse_width=_take(t, "pulse_ns", 20.0) * 1e-9,
        M=_take(t, "m", 1000),
        N_rep=_take(t, "n_rep", 1))

    n = raw.get("noise", {})
    noise = NoiseModel(
        dark_expectation=_take(n, "dark_e", 1000.0),
        readout_sigma=_take(n, "readout_sigma_e", 20.0),
        photon_scale=_take(n, "photon_scale", 1.0),
        seed=_take(n, "seed", 0))

    a = raw.get("attenuation", {})
    att = AttenuationModel(
        reference_distance=_take(a, "d0_m", 1.0),
        exponent=_take(a, "exponent", 2.0),
        floor=_take(a, "floor", 1e-6))

    p = raw.get("plan", {})
    plan = ExperimentPlan(
        buckets=[tuple(b) for b in _take(p, "buckets_m", ExperimentPlan().buckets)],
        snr_levels=list(_take(p, "snr_db", ExperimentPlan().snr_levels)),
        methods=list(_take(p, "methods", ExperimentPlan().methods)),
        scenes_per_cell=_take(p, "scenes_per_cell", 3),
        width=_take(p, "width", 64),
        height=_take(p, "height", 64),
        seed=_take(p, "seed", 0))

    tr = raw.get("train", {})
    weights = LossWeights(
        gamma1=_take(tr, "gamma1", 5e-4),
        gamma2=_take(tr, "gamma2", 5e-2),
        gamma3=_take(tr, "gamma3", 5.0),
        schedule=[tuple(s) for s in
                  _take(tr, "gamma_schedule", [(40, 5e-5, 1.0)])])
    train = TrainConfig(
        epochs=_take(tr, "epochs", 60),
        batch=_take(tr, "batch_px", 1024),
        lr=_take(tr, "lr", 2e-3),
        lr_decay=_take(tr, "lr_decay", 0.7),
        decay_interval=_take(tr, "decay_interval", 10),
        curriculum=list(_take(tr, "curriculum_db", [5.23, 3.68, 2.22])),
        curriculum_interval=_take(tr, "curriculum_interval", 10),
        weights=weights,
        optimizer=_take(tr, "optimizer", "adam"),
        code_lr=_take(tr, "code_lr", 0.05),
        finetune_epochs=_take(tr, "finetune_epochs", 10),
        decoder_passes=_take(tr, "decoder_passes", 4),
        seed=_take(tr, "seed", 0))

    m = raw.get("methods", {})
    cfg = HarnessConfig(
        timing=timing, noise=noise, att=att, plan=plan, train=train,
        hidden=tuple(_take(raw.get("train", {}), "hidden", (64, 64))),
        k=_take(raw.get("codes", {}), "k", 4),
        single_freq_hz=_take(m, "single_freq_mhz", 15.0) * 1e6,
        dual_freq_low_hz=_take(m, "dual_freq_low_mhz", 1.0) * 1e6,
        dual_freq_high_hz=_take(m, "dual_freq_high_mhz", 15.0) * 1e6,
        lookup_grid_step_m=_take(m, "lookup_grid_step_m", 0.01),
        train_bucket=tuple(_take(raw.get("train", {}), "bucket_m", (30.0, 33.0))),
        ambient_level=_take(raw.get("scene", {}), "ambient_level", 0.05))
    if seed is not None:
        cfg.plan.seed = seed
        cfg.train.seed = seed
        cfg.noise.seed = seed
    return cfg
