"""Run configuration files (TOML).

A complete file with every default spelled out::

    [domain]
    lengths = [1.0, 1.0, 1.0]
    resolution = [16, 16, 16]
    boundary = "neumann"            # "periodic" for heat_flow_torus

    [basis]
    n = 27                          # default 3**dim

    [model]
    flow = "llg_spin_current"       # heat_flow_bounded | heat_flow_torus
    alpha = 1.0
    beta = 0.0
    epsilon = 0.1
    demag = false
    demag_cache = ""                # optional DMGK kernel file

    [anisotropy]
    kind = "uniaxial"               # zero | uniaxial | expression
    delta0 = 0.25
    phi = ""                        # expression kind: value in z1, z2, z3
    grad_phi = []                   # expression kind: three expressions

    [current]
    kind = "zero"                   # zero | expression | tabulated
    components = []                 # expression kind: dim expressions in x1.., t
    times = []                      # tabulated kind (uniform in space)
    values = []                     # one list of dim numbers per time

    [initial]
    kind = "random"                 # random | expression | snapshot
    components = []                 # expression kind: three expressions, normalized pointwise
    amplitude = 0.2                 # random kind: size of the smooth perturbation of e3
    path = ""                       # snapshot kind: LLGF file

    [stepper]
    scheme = "rk4"                  # or implicit_midpoint
    dt = 0.001
    newton_tol = 1e-13
    newton_max_iter = 500

    [run]
    T = 0.1
    output_every = 0                # snapshot cadence in steps; 0 = first and last
    output_dir = "out"
    seed = 0
    vtk = false

Only ``domain.lengths``, ``domain.resolution``, ``model.flow`` and ``run.T``
are required.
"""

import math
import re
from dataclasses import asdict, dataclass, field as dc_field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
import tomli_w

from .errors import ParseError, ValidationError
from .expr import POTENTIAL_VARIABLES, Expression, field_variables
from .grid import Boundary, BoxDomain, build_basis
from .physics import AnisotropyPotential, FlowKind, ModelConfig, SpinCurrent
from .solver import Scheme, StepperConfig


@dataclass(frozen=True)
class DomainSection:
    lengths: tuple
    resolution: tuple
    boundary: str = "neumann"


@dataclass(frozen=True)
class BasisSection:
    n: int = 0


@dataclass(frozen=True)
class ModelSection:
    flow: str
    alpha: float = 1.0
    beta: float = 0.0
    epsilon: float = 0.1
    demag: bool = False
    demag_cache: str = ""


@dataclass(frozen=True)
class AnisotropySection:
    kind: str = "uniaxial"
    delta0: float = 0.25
    phi: str = ""
    grad_phi: tuple = ()


@dataclass(frozen=True)
class CurrentSection:
    kind: str = "zero"
    components: tuple = ()
    times: tuple = ()
    values: tuple = ()


@dataclass(frozen=True)
class InitialSection:
    kind: str = "random"
    components: tuple = ()
    amplitude: float = 0.2
    path: str = ""


@dataclass(frozen=True)
class StepperSection:
    scheme: str = "rk4"
    dt: float = 1e-3
    newton_tol: float = 1e-13
    newton_max_iter: int = 500


@dataclass(frozen=True)
class RunSection:
    T: float
    output_every: int = 0
    output_dir: str = "out"
    seed: int = 0
    vtk: bool = False


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSection
    model: ModelSection
    run: RunSection
    basis: BasisSection = dc_field(default_factory=BasisSection)
    anisotropy: AnisotropySection = dc_field(default_factory=AnisotropySection)
    current: CurrentSection = dc_field(default_factory=CurrentSection)
    initial: InitialSection = dc_field(default_factory=InitialSection)
    stepper: StepperSection = dc_field(default_factory=StepperSection)

    # builders -------------------------------------------------------------

    def build_domain(self):
        return BoxDomain(self.domain.lengths, self.domain.resolution, self.domain.boundary)

    def build_basis(self, domain=None):
        return build_basis(domain or self.build_domain(), self.basis.n)

    def build_anisotropy(self):
        a = self.anisotropy
        if a.kind == "zero":
            return AnisotropyPotential.zero(a.delta0)
        if a.kind == "uniaxial":
            return AnisotropyPotential.uniaxial(a.delta0)
        return AnisotropyPotential.from_expressions(a.phi, list(a.grad_phi), a.delta0)

    def build_current(self, domain):
        c = self.current
        if c.kind == "zero":
            return SpinCurrent.zero(domain)
        if c.kind == "expression":
            return SpinCurrent.from_expressions(domain, list(c.components))
        return SpinCurrent.tabulated(domain, np.array(c.times), np.array(c.values))

    def build_model(self, domain=None):
        domain = domain or self.build_domain()
        m = self.model
        cfg = ModelConfig(
            alpha=m.alpha, beta=m.beta, epsilon=m.epsilon, flow=FlowKind(m.flow), demag=m.demag,
            anisotropy=self.build_anisotropy(), current=self.build_current(domain),
        )
        cfg.check_domain(domain)
        return cfg

    def build_stepper(self):
        s = self.stepper
        return StepperConfig(Scheme(s.scheme), s.dt, s.newton_tol, s.newton_max_iter)

    def build_initial(self, domain=None):
        """Unit-length initial samples ``(3, *resolution)``."""
        from .io import read_snapshot

        domain = domain or self.build_domain()
        ini = self.initial
        if ini.kind == "snapshot":
            values, _ = read_snapshot(ini.path)
            if values.shape[1:] != domain.resolution:
                raise ValidationError(
                    f"snapshot resolution {values.shape[1:]} differs from the domain", key="initial.path"
                )
            return _normalize(values)
        if ini.kind == "expression":
            env = {f"x{i + 1}": c for i, c in enumerate(domain.coordinates())}
            env["t"] = 0.0
            variables = field_variables(domain.dim)
            comps = [np.broadcast_to(Expression(e, variables)(**env), domain.resolution)
                     for e in ini.components]
            return _normalize(np.stack(comps).astype(float))
        return random_initial(domain, self.run.seed, ini.amplitude)


def _normalize(values):
    mod = np.sqrt(np.sum(values * values, axis=0))
    if np.any(mod < 1e-12):
        raise ValidationError("initial field vanishes somewhere and cannot be normalized",
                              key="initial.components")
    return values / mod


def random_initial(domain, seed, amplitude=0.2, max_label=1):
    """Smooth random unit field ``(cos a cos b, sin a cos b, sin b)``.

    The angles ``a`` and ``b`` are random combinations (standard deviation
    ``amplitude``) of the cosine or Fourier modes with labels up to
    ``max_label`` per axis, so the field never degenerates.
    """
    rng = np.random.default_rng(seed)
    coords = domain.coordinates()
    angles = np.zeros((2,) + domain.resolution)
    grids = np.meshgrid(*[np.arange(max_label + 1)] * domain.dim, indexing="ij")
    for k in zip(*(g.ravel() for g in grids)):
        mode = np.ones(domain.resolution)
        for x, L, ki in zip(coords, domain.lengths, k):
            w = ki * math.pi / L if domain.boundary is Boundary.NEUMANN else 2 * math.pi * ki / L
            mode = mode * np.cos(w * x)
        coef = rng.normal(scale=amplitude, size=2)
        angles += coef.reshape((2,) + (1,) * domain.dim) * mode
    return unit_field_from_angles(angles[0], angles[1])


def unit_field_from_angles(a, b):
    return np.stack((np.cos(a) * np.cos(b), np.sin(a) * np.cos(b), np.sin(b)))


# --------------------------------------------------------------------------
# parsing and validation
# --------------------------------------------------------------------------

_SECTIONS = {
    "domain": DomainSection,
    "basis": BasisSection,
    "model": ModelSection,
    "anisotropy": AnisotropySection,
    "current": CurrentSection,
    "initial": InitialSection,
    "stepper": StepperSection,
    "run": RunSection,
}
_REQUIRED = {"domain": ("lengths", "resolution"), "model": ("flow",), "run": ("T",)}
_LOC = re.compile(r"line (\d+), column (\d+)")


def _coerce(section, key, value, kind):
    name = f"{section}.{key}"
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name}: expected {kind.__name__}, got {value!r}", key=name) from None
    raise AssertionError(kind)


_KINDS = {"lengths": tuple, "resolution": tuple, "grad_phi": tuple, "components": tuple,
          "times": tuple, "values": tuple}


def _field_kind(cls, f):
    if f.name in _KINDS:
        return _KINDS[f.name]
    return {"float": float, "int": int, "bool": bool, "str": str}[
        f.type if isinstance(f.type, str) else f.type.__name__
    ]


def from_dict(data):
    """Validate a parsed tree and build a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ValidationError("configuration must be a table")
    for name in data:
        if name not in _SECTIONS:
            raise ValidationError(f"unknown section [{name}]", key=name)
    for section, keys in _REQUIRED.items():
        for key in keys:
            if key not in data.get(section, {}):
                raise ValidationError(f"missing required key {section}.{key}", key=f"{section}.{key}")
    built = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ValidationError(f"[{name}] must be a table", key=name)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ValidationError(f"unknown key {name}.{key}", key=f"{name}.{key}")
            kwargs[key] = _coerce(name, key, value, _field_kind(cls, known[key]))
        built[name] = kwargs
    if "lengths" in built["domain"]:
        built["domain"]["lengths"] = tuple(_coerce("domain", "lengths", float(v), float)
                                           for v in built["domain"]["lengths"])
        built["domain"]["resolution"] = tuple(_coerce("domain", "resolution", v, int)
                                              for v in built["domain"]["resolution"])
    flow = built["model"]["flow"]
    try:
        FlowKind(flow)
    except ValueError:
        raise ValidationError(f"unknown flow {flow!r}", key="model.flow") from None
    if "boundary" not in built["domain"]:
        built["domain"]["boundary"] = "periodic" if flow == FlowKind.HEAT_FLOW_TORUS.value else "neumann"
    if "n" not in built["basis"]:
        built["basis"]["n"] = 3 ** len(built["domain"]["lengths"])
    cfg = RunConfig(**{name: _SECTIONS[name](**kw) for name, kw in built.items()})
    validate(cfg)
    return cfg


def _check_choice(value, choices, key):
    if value not in choices:
        raise ValidationError(f"{key} must be one of {', '.join(choices)}; got {value!r}", key=key)


def _check_expressions(texts, variables, key, count):
    if len(texts) != count:
        raise ValidationError(f"{key} needs {count} expressions, got {len(texts)}", key=key)
    rng = np.random.default_rng(0)
    env = {v: rng.uniform(0.1, 0.9, size=8) for v in variables}
    for text in texts:
        if not isinstance(text, str):
            raise ValidationError(f"{key}: expressions must be strings", key=key)
        try:
            value = np.asarray(Expression(text, variables)(**env), dtype=float)
        except ValidationError as exc:
            raise ValidationError(f"{key}: {exc}", key=key) from None
        if not np.all(np.isfinite(value)):
            raise ValidationError(f"{key}: {text!r} is not finite at sample points", key=key)


def validate(cfg):
    """Cross-field checks; raises ValidationError naming the offending key."""
    d = cfg.domain
    dim = len(d.lengths)
    if len(d.resolution) != dim or dim == 0:
        raise ValidationError("domain.lengths and domain.resolution differ in length", key="domain.resolution")
    _check_choice(d.boundary, [b.value for b in Boundary], "domain.boundary")
    try:
        domain = BoxDomain(d.lengths, d.resolution, d.boundary)
    except ValueError as exc:
        raise ValidationError(str(exc), key="domain") from None
    m = cfg.model
    if m.demag and dim != 3:
        raise ValidationError("demag requires dim=3", key="model.demag")
    if m.demag and m.flow != FlowKind.LLG_SPIN_CURRENT.value:
        raise ValidationError("demag only enters the llg_spin_current flow", key="model.demag")
    if m.flow == FlowKind.HEAT_FLOW_TORUS.value and d.boundary != "periodic":
        raise ValidationError("heat_flow_torus requires a periodic domain", key="domain.boundary")
    if m.flow != FlowKind.HEAT_FLOW_TORUS.value and d.boundary != "neumann":
        raise ValidationError(f"{m.flow} requires a neumann domain", key="domain.boundary")
    for key in ("alpha", "beta", "epsilon"):
        v = getattr(m, key)
        if not math.isfinite(v):
            raise ValidationError(f"model.{key} must be finite", key=f"model.{key}")
    if not m.alpha > 0:
        raise ValidationError("model.alpha must be positive", key="model.alpha")
    if m.beta < 0:
        raise ValidationError("model.beta must be non-negative", key="model.beta")
    if not 0 <= m.epsilon <= 1:
        raise ValidationError("model.epsilon must lie in [0, 1]", key="model.epsilon")
    if cfg.basis.n < 1:
        raise ValidationError("basis.n must be >= 1", key="basis.n")
    try:
        build_basis(domain, cfg.basis.n)
    except ValueError as exc:
        raise ValidationError(str(exc), key="basis.n") from None

    a = cfg.anisotropy
    _check_choice(a.kind, ("zero", "uniaxial", "expression"), "anisotropy.kind")
    if not 0 < a.delta0 < 0.5:
        raise ValidationError("anisotropy.delta0 must lie in (0, 1/2)", key="anisotropy.delta0")
    if a.kind == "expression":
        _check_expressions([a.phi], POTENTIAL_VARIABLES, "anisotropy.phi", 1)
        _check_expressions(list(a.grad_phi), POTENTIAL_VARIABLES, "anisotropy.grad_phi", 3)
        try:
            AnisotropyPotential.from_expressions(a.phi, list(a.grad_phi), a.delta0)
        except ValidationError as exc:
            raise ValidationError(str(exc), key="anisotropy.grad_phi") from None

    c = cfg.current
    _check_choice(c.kind, ("zero", "expression", "tabulated"), "current.kind")
    if c.kind == "expression":
        _check_expressions(list(c.components), field_variables(dim), "current.components", dim)
    if c.kind == "tabulated":
        times = np.asarray(c.times, dtype=float)
        values = np.asarray(c.values, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValidationError("current.times must be >= 2 increasing values", key="current.times")
        if values.shape != (times.size, dim):
            raise ValidationError(f"current.values must have shape ({times.size}, {dim})",
                                  key="current.values")
        if times[0] > 0 or times[-1] < cfg.run.T:
            raise ValidationError("current.times must cover [0, run.T]", key="current.times")

    i = cfg.initial
    _check_choice(i.kind, ("random", "expression", "snapshot"), "initial.kind")
    if i.kind == "expression":
        _check_expressions(list(i.components), field_variables(dim), "initial.components", 3)
    if i.kind == "snapshot" and not i.path:
        raise ValidationError("initial.path is required for snapshot initial data", key="initial.path")
    if not (math.isfinite(i.amplitude) and i.amplitude >= 0):
        raise ValidationError("initial.amplitude must be non-negative", key="initial.amplitude")

    s = cfg.stepper
    _check_choice(s.scheme, [x.value for x in Scheme], "stepper.scheme")
    if not (math.isfinite(s.dt) and s.dt > 0):
        raise ValidationError("stepper.dt must be positive", key="stepper.dt")
    if not s.newton_tol > 0:
        raise ValidationError("stepper.newton_tol must be positive", key="stepper.newton_tol")
    if s.newton_max_iter < 1:
        raise ValidationError("stepper.newton_max_iter must be >= 1", key="stepper.newton_max_iter")

    r = cfg.run
    if not (math.isfinite(r.T) and r.T >= 0):
        raise ValidationError("run.T must be non-negative", key="run.T")
    if r.output_every < 0:
        raise ValidationError("run.output_every must be >= 0", key="run.output_every")
    if r.seed < 0:
        raise ValidationError("run.seed must be >= 0", key="run.seed")


def parse_text(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ParseError(f"malformed configuration: {exc}", line=line, column=col) from None
    return from_dict(data)


def parse_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read())


def to_dict(cfg):
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return {name: {k: plain(v) for k, v in asdict(getattr(cfg, name)).items()} for name in _SECTIONS}


def serialize(cfg):
    return tomli_w.dumps(to_dict(cfg))


def with_overrides(cfg, seed=None, output_dir=None):
    run = cfg.run
    if seed is not None:
        run = replace(run, seed=int(seed))
    if output_dir is not None:
        run = replace(run, output_dir=str(output_dir))
    return replace(cfg, run=run)
