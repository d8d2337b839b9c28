"""Sensing environments: who can observe what, and how noisily.

Each environment bundles a hypothesis space with two observation models
over the same action set: the legitimate agent's channel and the
eavesdropper's tap. Sensor-grid environments index actions as
``action = sensor * modes + mode`` where higher mode numbers trade
agent-side accuracy for eavesdropper-side noise. Hypotheses for a grid
of S sensors are bitmasks in [0, 2**S): bit s set means sensor s covers
an anomalous process.

Environments are immutable and JSON-serializable; rebuilding from the
serialized config reproduces every table bit for bit (random draws are
re-derived from the stored seed).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .belief import DiscreteModel, GaussianModel, HypothesisSpace
from .errors import CalibrationDiverged, ParamOutOfRange, ShapeMismatch
from .seeding import STREAM_ENV, generator

__all__ = [
    "SensorGridSpec",
    "BinomialParams",
    "GaussianParams",
    "RiceanParams",
    "RadarParams",
    "KernelMismatchSpec",
    "Environment",
    "build_binomial_env",
    "build_gaussian_env",
    "build_ricean_env",
    "build_radar_env",
    "apply_mismatch",
    "env_to_config",
    "env_from_config",
]

# Default per-mode flip probabilities (legit, eve) for the binary grid.
# Mode 0 is plain access, higher modes degrade the eavesdropper harder
# than the agent.
DEFAULT_FLIP_LEGIT = (0.125, 0.2, 0.25)
DEFAULT_FLIP_EVE = (0.125, 0.4, 0.45)

# Default per-mode observation variances for the Gaussian grid.
DEFAULT_VAR_LEGIT = (0.25, 0.5, 1.0)
DEFAULT_VAR_EVE = (0.25, 1.25, 2.5)


@dataclass(frozen=True)
class SensorGridSpec:
    """Grid of ``num_sensors`` two-state processes, each probeable in one of
    ``modes_per_sensor`` access modes."""

    num_sensors: int
    modes_per_sensor: int = 3

    def __post_init__(self):
        if self.num_sensors < 1:
            raise ParamOutOfRange(f"num_sensors must be >= 1, got {self.num_sensors}")
        if self.modes_per_sensor < 1:
            raise ParamOutOfRange(f"modes_per_sensor must be >= 1, got {self.modes_per_sensor}")

    @property
    def n_actions(self) -> int:
        return self.num_sensors * self.modes_per_sensor

    @property
    def n_hypotheses(self) -> int:
        return 2 ** self.num_sensors


@dataclass(frozen=True)
class BinomialParams:
    """Per-mode flip probabilities for the binary observation grid."""

    flip_legit: tuple = DEFAULT_FLIP_LEGIT
    flip_eve: tuple = DEFAULT_FLIP_EVE

    def __post_init__(self):
        if len(self.flip_legit) != len(self.flip_eve):
            raise ParamOutOfRange("flip_legit and flip_eve must have one entry per mode")
        for name, flips in (("flip_legit", self.flip_legit), ("flip_eve", self.flip_eve)):
            for p in flips:
                if not (0.0 < p <= 0.5):
                    raise ParamOutOfRange(f"{name} entry {p} outside (0, 0.5]")


@dataclass(frozen=True)
class GaussianParams:
    """Per-mode observation variances; anomalous processes shift the mean."""

    var_legit: tuple = DEFAULT_VAR_LEGIT
    var_eve: tuple = DEFAULT_VAR_EVE
    mean_anomalous: float = 1.0
    mean_normal: float = 0.0

    def __post_init__(self):
        if len(self.var_legit) != len(self.var_eve):
            raise ParamOutOfRange("var_legit and var_eve must have one entry per mode")
        for name, variances in (("var_legit", self.var_legit), ("var_eve", self.var_eve)):
            for v in variances:
                if v <= 0:
                    raise ParamOutOfRange(f"{name} entry {v} must be positive")
        if self.mean_anomalous == self.mean_normal:
            raise ParamOutOfRange("anomalous and normal means must differ")


@dataclass(frozen=True)
class RiceanParams:
    """Fading-channel parameters for BPSK sensor reports.

    Sensor state maps to a +/-1 symbol, received through a Ricean fading
    channel at a chosen transmit power and decided by the sign of the
    real part. Rice factors are in dB; the eavesdropper's factor should
    be lower (worse line of sight). Calibration turns the physical
    channel into effective per-power flip probabilities by Monte Carlo.
    """

    kappa_legit_db: float = 5.0
    kappa_eve_db: float = -2.0
    power_levels_db: tuple = (-20.0, -10.0, 0.0)
    noise_power_db: float = -40.0
    calibration_samples: int = 100_000

    def __post_init__(self):
        if len(self.power_levels_db) < 1:
            raise ParamOutOfRange("need at least one power level")
        if self.calibration_samples < 10_000:
            raise ParamOutOfRange("calibration_samples must be >= 10000")


@dataclass(frozen=True)
class RadarParams:
    """Waveform-selection scenario: one of ``num_targets`` targets (or none)
    is present; the matched waveform returns a strong mean, mismatched
    waveforms a weak one. Per-target means are drawn once from the given
    ranges using the environment seed."""

    num_targets: int = 5
    var_legit: float = 1.0
    var_eve: float = 1.5
    strong_mean_range: tuple = (1.0, 2.0)
    weak_mean_range: tuple = (0.1, 0.5)

    def __post_init__(self):
        if self.num_targets < 1:
            raise ParamOutOfRange("num_targets must be >= 1")
        if self.var_legit <= 0 or self.var_eve <= 0:
            raise ParamOutOfRange("variances must be positive")
        if self.var_eve <= self.var_legit:
            raise ParamOutOfRange("eavesdropper variance must exceed the legitimate one")
        for name, (lo, hi) in (("strong_mean_range", self.strong_mean_range),
                               ("weak_mean_range", self.weak_mean_range)):
            if not (0 <= lo <= hi):
                raise ParamOutOfRange(f"{name} must satisfy 0 <= lo <= hi")


@dataclass(frozen=True)
class KernelMismatchSpec:
    """Multiplicative intervals for true-versus-assumed flip probabilities.

    At every sensing step the true channel draws a fresh factor uniformly
    from the interval and multiplies the nominal flip probability; agents
    keep filtering with the nominal model.
    """

    legit_range: tuple = (0.85, 1.15)
    eve_range: tuple = (0.7, 0.9)

    def __post_init__(self):
        for name, (lo, hi) in (("legit_range", self.legit_range), ("eve_range", self.eve_range)):
            if not (0 < lo <= hi):
                raise ParamOutOfRange(f"{name} must satisfy 0 < lo <= hi")


class MismatchedFlipSampler:
    """Samples binary observations with a per-step perturbed flip probability.

    The perturbed probability is ``nominal * U[lo, hi]``, drawn fresh on
    every call. Bounds are validated at construction so the product can
    never leave (0, 1). An exactly-identity interval skips the factor
    draw entirely, which keeps traces bit-identical to the nominal
    sampler under the same RNG stream.
    """

    def __init__(self, flip_per_action: np.ndarray, action_sensor: np.ndarray, interval: tuple):
        lo, hi = float(interval[0]), float(interval[1])
        flips = np.asarray(flip_per_action, dtype=np.float64)
        self.flip_lo = flips * lo
        self.flip_hi = flips * hi
        if np.any(self.flip_lo <= 0) or np.any(self.flip_hi >= 1):
            raise ParamOutOfRange(
                f"perturbed flip range [{self.flip_lo.min():.4g}, {self.flip_hi.max():.4g}] leaves (0, 1)")
        self.nominal = flips
        self.action_sensor = np.asarray(action_sensor)
        self.interval = (lo, hi)
        self.identity = lo == 1.0 and hi == 1.0

    def sample(self, action: int, hypothesis: int, rng: np.random.Generator) -> int:
        state = (hypothesis >> int(self.action_sensor[action])) & 1
        if self.identity:
            p = self.nominal[action]
        else:
            p = self.nominal[action] * rng.uniform(self.interval[0], self.interval[1])
        flip = rng.random() < p
        return state ^ int(flip)


@dataclass(frozen=True, eq=False)
class Environment:
    """A hypothesis space plus paired observation models.

    ``model_legit`` and ``model_eve`` are what the agents and the
    eavesdropper use for filtering. ``sampler_legit`` / ``sampler_eve``,
    when set, generate the true observations instead (kernel mismatch);
    by default sampling goes through the filtering models.
    """

    hyp: HypothesisSpace
    model_legit: object
    model_eve: object
    kind: str
    config: dict
    num_sensors: int | None = None
    modes_per_sensor: int | None = None
    action_sensor: tuple | None = None
    action_mode: tuple | None = None
    flip_legit_per_action: tuple | None = None
    flip_eve_per_action: tuple | None = None
    sampler_legit: object | None = None
    sampler_eve: object | None = None

    @property
    def n_actions(self) -> int:
        return self.model_legit.n_actions

    @property
    def n_hypotheses(self) -> int:
        return self.hyp.count

    def sample_legit(self, action: int, hypothesis: int, rng: np.random.Generator):
        src = self.sampler_legit if self.sampler_legit is not None else self.model_legit
        return src.sample(action, hypothesis, rng)

    def sample_eve(self, action: int, hypothesis: int, rng: np.random.Generator):
        src = self.sampler_eve if self.sampler_eve is not None else self.model_eve
        return src.sample(action, hypothesis, rng)


def _grid_layout(spec: SensorGridSpec):
    """(action_sensor, action_mode) arrays under action = sensor*modes + mode."""
    actions = np.arange(spec.n_actions)
    return actions // spec.modes_per_sensor, actions % spec.modes_per_sensor


def _binary_table(spec: SensorGridSpec, flip_per_action: np.ndarray) -> np.ndarray:
    """(A, X, 2) table: P[y=1 | a, x] = 1 - flip if probed bit set, else flip."""
    sensor, _ = _grid_layout(spec)
    x = np.arange(spec.n_hypotheses)
    bits = (x[None, :] >> sensor[:, None]) & 1            # (A, X)
    p1 = np.where(bits == 1, 1.0 - flip_per_action[:, None], flip_per_action[:, None])
    table = np.stack([1.0 - p1, p1], axis=2)
    return table


def build_binomial_env(spec: SensorGridSpec, params: BinomialParams = BinomialParams(),
                       seed: int = 0) -> Environment:
    """Binary-observation sensor grid with per-mode flip probabilities."""
    if spec.modes_per_sensor != len(params.flip_legit):
        raise ParamOutOfRange(
            f"spec has {spec.modes_per_sensor} modes but params carry {len(params.flip_legit)}")
    sensor, mode = _grid_layout(spec)
    flips_l = np.asarray(params.flip_legit, dtype=np.float64)[mode]
    flips_e = np.asarray(params.flip_eve, dtype=np.float64)[mode]
    config = {
        "kind": "binomial",
        "num_sensors": spec.num_sensors,
        "modes_per_sensor": spec.modes_per_sensor,
        "flip_legit": list(params.flip_legit),
        "flip_eve": list(params.flip_eve),
        "seed": int(seed),
    }
    return Environment(
        hyp=HypothesisSpace.uniform(spec.n_hypotheses),
        model_legit=DiscreteModel(_binary_table(spec, flips_l)),
        model_eve=DiscreteModel(_binary_table(spec, flips_e)),
        kind="binomial",
        config=config,
        num_sensors=spec.num_sensors,
        modes_per_sensor=spec.modes_per_sensor,
        action_sensor=tuple(int(s) for s in sensor),
        action_mode=tuple(int(m) for m in mode),
        flip_legit_per_action=tuple(float(p) for p in flips_l),
        flip_eve_per_action=tuple(float(p) for p in flips_e),
    )


def build_gaussian_env(spec: SensorGridSpec, params: GaussianParams = GaussianParams(),
                       seed: int = 0) -> Environment:
    """Real-valued sensor grid; anomalies shift the observation mean."""
    if spec.modes_per_sensor != len(params.var_legit):
        raise ParamOutOfRange(
            f"spec has {spec.modes_per_sensor} modes but params carry {len(params.var_legit)}")
    sensor, mode = _grid_layout(spec)
    x = np.arange(spec.n_hypotheses)
    bits = (x[None, :] >> sensor[:, None]) & 1
    means = np.where(bits == 1, params.mean_anomalous, params.mean_normal).astype(np.float64)
    var_l = np.asarray(params.var_legit, dtype=np.float64)[mode]
    var_e = np.asarray(params.var_eve, dtype=np.float64)[mode]
    config = {
        "kind": "gaussian",
        "num_sensors": spec.num_sensors,
        "modes_per_sensor": spec.modes_per_sensor,
        "var_legit": list(params.var_legit),
        "var_eve": list(params.var_eve),
        "mean_anomalous": params.mean_anomalous,
        "mean_normal": params.mean_normal,
        "seed": int(seed),
    }
    return Environment(
        hyp=HypothesisSpace.uniform(spec.n_hypotheses),
        model_legit=GaussianModel(means, var_l),
        model_eve=GaussianModel(means, var_e),
        kind="gaussian",
        config=config,
        num_sensors=spec.num_sensors,
        modes_per_sensor=spec.modes_per_sensor,
        action_sensor=tuple(int(s) for s in sensor),
        action_mode=tuple(int(m) for m in mode),
    )


def _rice_flip_probability(kappa_db: float, power_db: float, noise_power_db: float,
                           samples: int, rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the symbol flip probability.

    The channel is h = sqrt(k/(k+1)) + sqrt(1/(k+1)) * w with w complex
    standard normal (line-of-sight phase fixed at zero); the receiver
    decides on the sign of Re(sqrt(P) h s + n). By symmetry one symbol
    suffices. The same fade and noise draws are reused across power
    levels by the caller, which keeps the estimated flip probability
    monotone in transmit power.
    """
    kappa = 10.0 ** (kappa_db / 10.0)
    power = 10.0 ** (power_db / 10.0)
    noise_var = 10.0 ** (noise_power_db / 10.0)
    los = math.sqrt(kappa / (kappa + 1.0))
    scatter_sd = math.sqrt(1.0 / (2.0 * (kappa + 1.0)))
    fade_re = rng.normal(los, scatter_sd, samples)
    noise_re = rng.normal(0.0, math.sqrt(noise_var / 2.0), samples)
    return float(np.mean(math.sqrt(power) * fade_re + noise_re <= 0.0))


def _calibrate_rice_flips(params: RiceanParams, kappa_db: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Effective flip probability per power level, common random numbers."""
    kappa = 10.0 ** (kappa_db / 10.0)
    noise_var = 10.0 ** (params.noise_power_db / 10.0)
    los = math.sqrt(kappa / (kappa + 1.0))
    scatter_sd = math.sqrt(1.0 / (2.0 * (kappa + 1.0)))
    fade_re = rng.normal(los, scatter_sd, params.calibration_samples)
    noise_re = rng.normal(0.0, math.sqrt(noise_var / 2.0), params.calibration_samples)
    flips = []
    for power_db in params.power_levels_db:
        amp = math.sqrt(10.0 ** (power_db / 10.0))
        flips.append(float(np.mean(amp * fade_re + noise_re <= 0.0)))
    return np.asarray(flips)


def build_ricean_env(spec: SensorGridSpec, params: RiceanParams = RiceanParams(),
                     seed: int = 0) -> Environment:
    """Fading-channel grid reduced to effective per-power flip probabilities.

    Actions are (sensor, power level) pairs; the calibrated flip
    probability depends only on the power level. Raises
    CalibrationDiverged when even the highest power cannot get the
    legitimate flip probability below 0.5.
    """
    if spec.modes_per_sensor != len(params.power_levels_db):
        raise ParamOutOfRange(
            f"spec has {spec.modes_per_sensor} modes but params carry "
            f"{len(params.power_levels_db)} power levels")
    rng_l = generator(seed, STREAM_ENV, 0)
    rng_e = generator(seed, STREAM_ENV, 1)
    flips_l = _calibrate_rice_flips(params, params.kappa_legit_db, rng_l)
    flips_e = _calibrate_rice_flips(params, params.kappa_eve_db, rng_e)
    if flips_l.min() >= 0.5:
        raise CalibrationDiverged(
            f"legitimate flip probability {flips_l.min():.3f} >= 0.5 at the highest power")
    # The filtering model cannot represent flip = 0 exactly in log domain
    # without -inf rows becoming degenerate; clamp to one part in 1e7.
    flips_l = np.clip(flips_l, 1e-7, None)
    flips_e = np.clip(flips_e, 1e-7, None)
    sensor, mode = _grid_layout(spec)
    pf_l = flips_l[mode]
    pf_e = flips_e[mode]
    config = {
        "kind": "ricean",
        "num_sensors": spec.num_sensors,
        "kappa_legit_db": params.kappa_legit_db,
        "kappa_eve_db": params.kappa_eve_db,
        "power_levels_db": list(params.power_levels_db),
        "noise_power_db": params.noise_power_db,
        "calibration_samples": params.calibration_samples,
        "seed": int(seed),
    }
    return Environment(
        hyp=HypothesisSpace.uniform(spec.n_hypotheses),
        model_legit=DiscreteModel(_binary_table(spec, pf_l)),
        model_eve=DiscreteModel(_binary_table(spec, pf_e)),
        kind="ricean",
        config=config,
        num_sensors=spec.num_sensors,
        modes_per_sensor=spec.modes_per_sensor,
        action_sensor=tuple(int(s) for s in sensor),
        action_mode=tuple(int(m) for m in mode),
        flip_legit_per_action=tuple(float(p) for p in pf_l),
        flip_eve_per_action=tuple(float(p) for p in pf_e),
    )


def build_radar_env(params: RadarParams = RadarParams(), seed: int = 0,
                    prior: np.ndarray | None = None) -> Environment:
    """Waveform-selection environment with ``num_targets + 1`` hypotheses.

    Hypothesis 0 is "no target" (zero mean under every waveform);
    hypothesis v >= 1 returns the strong per-target mean under the
    matched waveform a = v - 1 and the weak mean otherwise. The prior
    defaults to uniform.
    """
    rng = generator(seed, STREAM_ENV, 2)
    n = params.num_targets
    strong = rng.uniform(params.strong_mean_range[0], params.strong_mean_range[1], n)
    weak = rng.uniform(params.weak_mean_range[0], params.weak_mean_range[1], n)
    means = np.zeros((n, n + 1))
    for a in range(n):
        for v in range(1, n + 1):
            means[a, v] = strong[v - 1] if a == v - 1 else weak[v - 1]
    var_l = np.full(n, params.var_legit)
    var_e = np.full(n, params.var_eve)
    hyp = (HypothesisSpace(n + 1, prior) if prior is not None
           else HypothesisSpace.uniform(n + 1))
    config = {
        "kind": "radar",
        "num_targets": n,
        "var_legit": params.var_legit,
        "var_eve": params.var_eve,
        "strong_mean_range": list(params.strong_mean_range),
        "weak_mean_range": list(params.weak_mean_range),
        "prior": None if prior is None else [float(p) for p in hyp.prior],
        "seed": int(seed),
    }
    return Environment(
        hyp=hyp,
        model_legit=GaussianModel(means, var_l),
        model_eve=GaussianModel(means, var_e),
        kind="radar",
        config=config,
        num_sensors=n,
        modes_per_sensor=1,
        action_sensor=tuple(range(n)),
        action_mode=(0,) * n,
    )


def apply_mismatch(env: Environment, spec: KernelMismatchSpec = KernelMismatchSpec()) -> Environment:
    """Wrap a binary-grid environment so true flip probabilities drift.

    Filtering models stay nominal; only sampling changes. Per-step
    factors are drawn from the episode RNG at sample time, so the
    wrapped environment itself stays immutable. An identity interval on
    a side leaves that side's sampler untouched (bit-identical traces).
    """
    if env.flip_legit_per_action is None:
        raise ParamOutOfRange(f"kernel mismatch needs a binary-grid environment, got kind={env.kind!r}")
    if spec.legit_range == (1.0, 1.0) and spec.eve_range == (1.0, 1.0):
        return env
    flips_l = np.asarray(env.flip_legit_per_action)
    flips_e = np.asarray(env.flip_eve_per_action)
    sensor = np.asarray(env.action_sensor)
    sampler_l = (None if spec.legit_range == (1.0, 1.0)
                 else MismatchedFlipSampler(flips_l, sensor, spec.legit_range))
    sampler_e = (None if spec.eve_range == (1.0, 1.0)
                 else MismatchedFlipSampler(flips_e, sensor, spec.eve_range))
    config = {
        "kind": "mismatch",
        "base": env.config,
        "legit_range": list(spec.legit_range),
        "eve_range": list(spec.eve_range),
    }
    return dataclasses.replace(env, kind="mismatch", config=config,
                               sampler_legit=sampler_l, sampler_eve=sampler_e)


def env_to_config(env: Environment) -> dict:
    """JSON-serializable description sufficient to rebuild the environment."""
    return env.config


def _params_from(cls, config: dict, tuple_fields=()):
    """Instantiate a params dataclass from the config keys it declares;
    absent keys keep their defaults."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in config:
            v = config[f.name]
            kwargs[f.name] = tuple(v) if f.name in tuple_fields else v
    return cls(**kwargs)


def env_from_config(config: dict) -> Environment:
    """Rebuild an environment from its serialized config, bit for bit.

    Omitted kind-specific parameters fall back to the documented
    defaults, so a minimal block like {"kind": "binomial",
    "num_sensors": 2} is complete.
    """
    kind = config.get("kind")
    seed = config.get("seed", 0)
    if kind == "binomial":
        params = _params_from(BinomialParams, config, ("flip_legit", "flip_eve"))
        spec = SensorGridSpec(config["num_sensors"],
                              config.get("modes_per_sensor", len(params.flip_legit)))
        return build_binomial_env(spec, params, seed=seed)
    if kind == "gaussian":
        params = _params_from(GaussianParams, config, ("var_legit", "var_eve"))
        spec = SensorGridSpec(config["num_sensors"],
                              config.get("modes_per_sensor", len(params.var_legit)))
        return build_gaussian_env(spec, params, seed=seed)
    if kind == "ricean":
        params = _params_from(RiceanParams, config, ("power_levels_db",))
        spec = SensorGridSpec(config["num_sensors"], len(params.power_levels_db))
        return build_ricean_env(spec, params, seed=seed)
    if kind == "radar":
        params = _params_from(RadarParams, config, ("strong_mean_range", "weak_mean_range"))
        prior = config.get("prior")
        return build_radar_env(params, seed=seed,
                               prior=None if prior is None else np.asarray(prior))
    if kind == "mismatch":
        base = env_from_config(config["base"])
        spec = _params_from(KernelMismatchSpec, config, ("legit_range", "eve_range"))
        return apply_mismatch(base, spec)
    raise ShapeMismatch(f"unknown environment kind {kind!r}")
