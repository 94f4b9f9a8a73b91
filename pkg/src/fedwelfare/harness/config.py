"""Scenario configuration: JSON documents mapped onto frozen dataclasses.

Unknown keys are rejected at every level so that typos fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

from ..contribution import ContributionMethod
from ..economics import ClientEconParams
from ..errors import ConfigurationError
from ..metrics import SEMANTICS, RETROSPECTIVE
from ..model import FEDAVG, FEDBN, AccuracyOracleParams

TRAINER = "trainer"
ORACLE = "oracle"
OPTIMIZE = "optimize"
LEAST_LENIENT = "least-lenient"
MOST_LENIENT = "most-lenient"
POLICIES = (OPTIMIZE, LEAST_LENIENT, MOST_LENIENT)

PRESETS = ("heterogeneous", "homogeneous-large", "homogeneous-small", "label-noise", "toy-example")


@dataclass(frozen=True)
class DataSource:
    shift: float = 0.0          # norm of the client's feature offset
    scale: float = 1.0          # multiplicative feature distortion
    label_noise: float = 0.0
    idx_images: str | None = None
    idx_labels: str | None = None


@dataclass(frozen=True)
class OracleOverrides:
    hetero_factor: float | None = None
    quality_weight: float | None = None
    a_max: float | None = None
    tau: float | None = None
    noise_sd: float | None = None


@dataclass(frozen=True)
class ClientSpec:
    id: int
    lam: float = 100.0
    econ: ClientEconParams = ClientEconParams()
    data: DataSource = DataSource()
    oracle: OracleOverrides = OracleOverrides()


@dataclass(frozen=True)
class FederationSpec:
    T: int = 15
    L: int = 5
    early_stop_delta: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    learning_rate: float = 0.05
    algorithm: str = FEDAVG
    backend: str = ORACLE


@dataclass(frozen=True)
class MechanismSpec:
    mu: float = 0.1
    contribution: ContributionMethod = ContributionMethod()
    tsfi_semantics: str = RETROSPECTIVE
    policy: str = OPTIMIZE


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 10
    features: int = 16
    separation: float = 2.0


@dataclass(frozen=True)
class OracleSpec:
    a_max: float = 0.9
    tau: float = 1000.0
    noise_sd: float = 0.01
    subset_noise_sd: float = 0.0075   # evaluation noise of coalition models other than the full set


@dataclass(frozen=True)
class RunSpec:
    base_seed: int = 0
    replications: int = 100
    output_dir: str | None = None


@dataclass(frozen=True)
class InjectedRow:
    client: int
    utility: float
    cost: float
    q: float


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    clients: tuple
    federation: FederationSpec = FederationSpec()
    mechanism: MechanismSpec = MechanismSpec()
    synthetic: SyntheticSpec = SyntheticSpec()
    oracle: OracleSpec = OracleSpec()
    run: RunSpec = RunSpec()
    injected: tuple | None = None   # rounds of InjectedRow; bypasses learning entirely
    description: str = ""

    def __post_init__(self):
        validate(self)

    @property
    def client_ids(self) -> tuple:
        return tuple(sorted(c.id for c in self.clients))

    @property
    def rounds(self) -> int:
        return len(self.injected) if self.injected is not None else self.federation.T

    def oracle_params(self, client: ClientSpec) -> AccuracyOracleParams:
        """Oracle curve for one client.

        Label noise lowers both what the client can measure on its own
        corrupted validation set (ceiling 1 - rate) and how much its samples
        teach the pooled model (squared signal fraction of the noisy labels).
        Explicit overrides win.
        """
        rate = client.data.label_noise
        k = self.synthetic.classes
        signal = max(0.0, 1.0 - rate * k / (k - 1))
        o = client.oracle
        return AccuracyOracleParams(
            a_max=o.a_max if o.a_max is not None else self.oracle.a_max,
            tau=o.tau if o.tau is not None else self.oracle.tau,
            hetero_factor=o.hetero_factor if o.hetero_factor is not None else 1.0 - rate,
            quality_weight=o.quality_weight if o.quality_weight is not None else signal ** 2,
            noise_sd=o.noise_sd if o.noise_sd is not None else self.oracle.noise_sd,
        )

    def with_overrides(self, mu: float | None = None, replications: int | None = None,
                       base_seed: int | None = None, output_dir: str | None = None,
                       policy: str | None = None) -> "ScenarioConfig":
        mech, run = self.mechanism, self.run
        if mu is not None:
            mech = replace(mech, mu=float(mu))
        if policy is not None:
            mech = replace(mech, policy=policy)
        if replications is not None:
            run = replace(run, replications=int(replications))
        if base_seed is not None:
            run = replace(run, base_seed=int(base_seed))
        if output_dir is not None:
            run = replace(run, output_dir=str(output_dir))
        return replace(self, mechanism=mech, run=run)

    def to_dict(self) -> dict:
        """Plain JSON-compatible form accepted by :func:`config_from_dict`."""
        d = asdict(self)
        for c in d["clients"]:
            c["lambda"] = c.pop("lam")
        if d["injected"] is None:
            del d["injected"]
        return json.loads(json.dumps(d))


def validate(cfg: ScenarioConfig) -> None:
    if not cfg.clients:
        raise ConfigurationError("a scenario needs clients")
    ids = [c.id for c in cfg.clients]
    if len(ids) < 2:
        raise ConfigurationError("a federation needs at least two clients")
    if len(set(ids)) != len(ids):
        raise ConfigurationError("client ids must be unique")
    if any(not isinstance(n, int) or isinstance(n, bool) or n < 0 for n in ids):
        raise ConfigurationError("client ids must be non-negative integers")
    for c in cfg.clients:
        if not c.lam > 0:
            raise ConfigurationError(f"client {c.id}: lambda must be positive")
        if not 0 <= c.data.label_noise <= 1:
            raise ConfigurationError(f"client {c.id}: label_noise must lie in [0, 1]")
        if (c.data.idx_images is None) != (c.data.idx_labels is None):
            raise ConfigurationError(f"client {c.id}: give both idx_images and idx_labels")
    f = cfg.federation
    if f.T < 1 or f.L < 1:
        raise ConfigurationError("T and L must be >= 1")
    if f.algorithm not in (FEDAVG, FEDBN):
        raise ConfigurationError(f"unknown algorithm {f.algorithm!r}")
    if f.backend not in (TRAINER, ORACLE):
        raise ConfigurationError(f"unknown backend {f.backend!r}")
    if f.early_stop_delta < 0 or f.batch_size < 1 or f.epochs < 1 or f.learning_rate < 0:
        raise ConfigurationError("invalid trainer settings")
    m = cfg.mechanism
    if not m.mu >= 0 or m.mu == float("inf"):
        raise ConfigurationError("mu must be finite and non-negative")
    if m.tsfi_semantics not in SEMANTICS:
        raise ConfigurationError(f"unknown tsfi_semantics {m.tsfi_semantics!r}")
    if m.policy not in POLICIES:
        raise ConfigurationError(f"unknown policy {m.policy!r}")
    if cfg.synthetic.classes < 2 or cfg.synthetic.features < 1:
        raise ConfigurationError("synthetic task needs >= 2 classes and >= 1 feature")
    if cfg.oracle.subset_noise_sd < 0:
        raise ConfigurationError("subset_noise_sd must be non-negative")
    if cfg.run.replications < 1:
        raise ConfigurationError("replications must be >= 1")
    if cfg.injected is not None:
        if not cfg.injected:
            raise ConfigurationError("injected mode needs at least one round")
        for t, rows in enumerate(cfg.injected, 1):
            if {r.client for r in rows} != set(ids):
                raise ConfigurationError(f"injected round {t} must list every client once")
    for c in cfg.clients:
        cfg.oracle_params(c)   # raises on out-of-range oracle settings


# --- JSON mapping ---------------------------------------------------------------

def _build(cls, data: Any, where: str, rename: dict | None = None, nested: dict | None = None):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object")
    rename = rename or {}
    nested = nested or {}
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        attr = rename.get(key, key)
        if attr not in names or attr in rename.values() and key not in rename:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        kwargs[attr] = nested[attr](value, f"{where}.{key}") if attr in nested else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def _client(d, where):
    return _build(ClientSpec, d, where, rename={"lambda": "lam"}, nested={
        "econ": lambda v, w: _build(ClientEconParams, v, w),
        "data": lambda v, w: _build(DataSource, v, w),
        "oracle": lambda v, w: _build(OracleOverrides, v, w),
    })


def _injected(rounds, where):
    if not isinstance(rounds, list):
        raise ConfigurationError(f"{where}: expected a list of rounds")
    return tuple(tuple(_build(InjectedRow, r, f"{where}[{t}]") for r in rows)
                 for t, rows in enumerate(rounds))


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data.get("clients"), list):
        raise ConfigurationError("config: 'clients' must be a list")
    return _build(ScenarioConfig, data, "config", nested={
        "clients": lambda v, w: tuple(_client(c, f"{w}[{i}]") for i, c in enumerate(v)),
        "federation": lambda v, w: _build(FederationSpec, v, w),
        "mechanism": lambda v, w: _build(MechanismSpec, v, w, nested={
            "contribution": lambda c, cw: _build(ContributionMethod, c, cw)}),
        "synthetic": lambda v, w: _build(SyntheticSpec, v, w),
        "oracle": lambda v, w: _build(OracleSpec, v, w),
        "run": lambda v, w: _build(RunSpec, v, w),
        "injected": _injected,
    })


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def preset_path(name: str):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("fedwelfare.harness") / "presets" / f"{name}.json"


def load_preset(name: str) -> ScenarioConfig:
    return config_from_dict(json.loads(preset_path(name).read_text(encoding="utf-8")))


def resolve_config(spec: str) -> ScenarioConfig:
    """A preset name or a path to a JSON config file."""
    if spec in PRESETS and not Path(spec).exists():
        return load_preset(spec)
    return load_config(spec)


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
