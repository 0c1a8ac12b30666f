"""Model analysis.

Resolves names with spatial scoping, classifies processes, assembles the
stoichiometry matrix for the reaction network, and compiles every rate,
probability, predicate and force body to expression IR.

Spatial scoping ladder for a free symbol, innermost first:
    binder name -> attribute/species on the host scope -> enclosing-region
    scalar -> spatial field produced by a sibling collection -> parameter
    -> error (with the search trace in the message).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .ir import Program, compile_expr
from .source import CompileError, Span
from .syntax import (
    Binary,
    Call,
    Declaration,
    Expr,
    FieldDecl,
    FillDecl,
    Initializer,
    InstanceDecl,
    LinkDecl,
    LinkTerm,
    Literal,
    ParamDecl,
    PathExpr,
    ProcDecl,
    SyntaxTree,
    Term,
    TypeDecl,
    Unary,
    VectorLit,
)

_ATTR_KINDS = ("conc", "amount", "site", "enum")
PLANE_NAMES = ("FLOOR", "CEILING", "LEFT", "RIGHT", "FRONT", "BACK")

# Engine defaults, overridable with `param` declarations of the same name.
ENGINE_PARAM_DEFAULTS = {
    "dpd_a": 25.0,
    "dpd_gamma": 4.5,
    "dpd_kbt": 1.0,
    "dpd_cutoff": 1.0,
}


# ---------------------------------------------------------------------------
# Compiled definitions


@dataclass(frozen=True)
class AttrDef:
    name: str
    kind: str  # conc | amount | site | enum
    init: object  # float for conc/amount, state name for site/enum
    const: bool = False
    values: tuple[str, ...] = ()  # enum states
    implicit: Optional[str] = None  # None | "output" | "input"


@dataclass(frozen=True)
class ParticleTypeDef:
    name: str
    base: Optional[str]
    radius: Optional[float]
    mass: float
    attrs: tuple[AttrDef, ...] = ()

    def attr(self, name: str) -> Optional[AttrDef]:
        for a in self.attrs:
            if a.name == name:
                return a
        return None


@dataclass(frozen=True)
class SphereSpec:
    radius: float
    resolution: int


@dataclass(frozen=True)
class CollectionDef:
    """A named group of particles: a region surface, a fill, or a single
    declared particle instance."""

    path: str  # e.g. "solvent", "MyCell.surface", "p"
    kind: str  # surface | fill | single
    particle_type: str
    sphere: Optional[SphereSpec] = None  # surface collections
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)  # single particles
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    overrides: tuple[tuple[str, float], ...] = ()  # radius/mass/attr presets
    species: tuple[AttrDef, ...] = ()  # attached per-particle columns


@dataclass(frozen=True)
class RegionTypeDef:
    name: str
    scalars: tuple[AttrDef, ...] = ()
    collections: tuple[CollectionDef, ...] = ()  # paths "<Type>.<member>"
    surface_stiffness: float = 50.0
    volume_stiffness: float = 0.0


@dataclass(frozen=True)
class RegionInstanceDef:
    name: str
    type_name: str
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SpeciesDef:
    owner: str  # "world" | region type | collection path
    name: str
    kind: str  # conc | amount
    init: float
    const: bool = False
    per_particle: bool = False
    implicit: Optional[str] = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.owner, self.name)

    @property
    def label(self) -> str:
        return self.name if self.owner == "world" else f"{self.owner}.{self.name}"


@dataclass(frozen=True)
class TransformProc:
    """Reaction-network process: one stoichiometry column, rate body nu."""

    name: str
    host: str
    reactants: tuple[tuple[tuple[str, str], int], ...]  # (species key, coef)
    products: tuple[tuple[tuple[str, str], int], ...]
    rate: Program
    span: Span


@dataclass(frozen=True)
class RateProc:
    """Zero-input source: adds its body value directly to dC/dt of each
    output, optionally gated by a spatial predicate per host particle."""

    name: str
    host: str
    outputs: tuple[tuple[tuple[str, str], int], ...]
    body: Program
    gate: Optional[Program]
    span: Span


@dataclass(frozen=True)
class FluxProc:
    """Pairwise transport of one attribute between neighboring hosts."""

    name: str
    src: tuple[str, str]  # species key at binder a
    dst: tuple[str, str]
    cutoff: float
    body: Program  # rate; positive moves value from a to b
    span: Span


@dataclass(frozen=True)
class PatternTerm:
    binder: Optional[str]
    type_name: str
    constraints: tuple[tuple[str, str], ...] = ()  # attr = state


@dataclass(frozen=True)
class CreateOut:
    type_name: str
    count: int = 1


@dataclass(frozen=True)
class UpdateOut:
    binder: str
    updates: tuple[tuple[str, str], ...] = ()  # empty = pass-through


@dataclass(frozen=True)
class LinkOut:
    sites: tuple[tuple[str, str], ...]  # (binder, site attr)
    force: Program


@dataclass(frozen=True)
class DiscreteProcDef:
    name: str
    inputs: tuple[PatternTerm, ...]
    outputs: tuple[object, ...]  # CreateOut | UpdateOut | LinkOut
    cutoff: Optional[float]  # pair cutoff from `when(dist(a,b) < c)`
    when: Optional[Program]
    prob: Optional[Program]  # None = always fires
    span: Span


@dataclass(frozen=True)
class Endpoint:
    binder: Optional[str]
    target: tuple  # ("collection", path) | ("single", path) | ("plane", name)


@dataclass(frozen=True)
class LinkRule:
    name: str
    participants: tuple[Endpoint, ...]
    attach_cutoff: Optional[float]
    detach_cutoff: Optional[float]
    force: Program
    explicit: bool  # no when-predicate: instantiate at build time
    span: Span


@dataclass(frozen=True)
class FieldDef:
    """Kernel field generated by a per-particle species column."""

    source: str  # collection path
    species: str
    kernel: str = "shepard-spline"


@dataclass(frozen=True)
class ScopeResolution:
    kind: str  # local-attribute | region-scalar | spatial-field | parameter | unresolved
    owner: Optional[str] = None
    name: Optional[str] = None
    trace: tuple[str, ...] = ()


@dataclass(frozen=True)
class CompiledModel:
    species: tuple[SpeciesDef, ...]  # dynamic (network) block first
    n_network: int  # rows of the stoichiometry matrix
    stoich: tuple[tuple[int, ...], ...]
    transforms: tuple[TransformProc, ...]
    rates: tuple[RateProc, ...]
    fluxes: tuple[FluxProc, ...]
    discretes: tuple[DiscreteProcDef, ...]
    link_rules: tuple[LinkRule, ...]
    particle_types: tuple[ParticleTypeDef, ...]
    region_types: tuple[RegionTypeDef, ...]
    region_instances: tuple[RegionInstanceDef, ...]
    world_collections: tuple[CollectionDef, ...]
    box: Optional[tuple[tuple[float, float, float], tuple[float, float, float]]]
    params: tuple[tuple[str, float], ...]
    fields: tuple[FieldDef, ...]
    warnings: tuple[str, ...]

    def particle_type(self, name: str) -> ParticleTypeDef:
        for t in self.particle_types:
            if t.name == name:
                return t
        raise KeyError(name)

    def region_type(self, name: str) -> RegionTypeDef:
        for t in self.region_types:
            if t.name == name:
                return t
        raise KeyError(name)

    def species_index(self, key: tuple[str, str]) -> int:
        for i, s in enumerate(self.species):
            if s.key == key:
                return i
        raise KeyError(key)

    @property
    def param_dict(self) -> dict[str, float]:
        return dict(self.params)


BUILTIN_PARTICLE_TYPES = (
    ParticleTypeDef("particle", None, None, 1.0),
    ParticleTypeDef("Water", "particle", 0.5, 1.0),
    ParticleTypeDef("FluidParticle", "particle", 0.5, 1.0),
)


# ---------------------------------------------------------------------------
# Helpers


def _is_int(x: float) -> bool:
    return float(x) == int(x)


class _Scope:
    """Mutable scope record used during analysis; world or one region type."""

    def __init__(self, name: str, parent: Optional["_Scope"]):
        self.name = name
        self.parent = parent
        self.scalars: dict[str, AttrDef] = {}
        self.collections: dict[str, "_Coll"] = {}  # member name -> builder
        self.procs: list[tuple[ProcDecl, "_Scope"]] = []
        self.links: list[tuple[LinkDecl, "_Scope"]] = []
        self.surface_stiffness = 50.0
        self.volume_stiffness = 0.0


class _Coll:
    def __init__(self, path, kind, ptype, **kw):
        self.path = path
        self.kind = kind
        self.particle_type = ptype
        self.sphere = kw.get("sphere")
        self.position = kw.get("position", (0.0, 0.0, 0.0))
        self.velocity = kw.get("velocity", (0.0, 0.0, 0.0))
        self.overrides = dict(kw.get("overrides", ()))
        self.species: dict[str, AttrDef] = {}

    def freeze(self) -> CollectionDef:
        return CollectionDef(
            self.path,
            self.kind,
            self.particle_type,
            self.sphere,
            tuple(self.position),
            tuple(self.velocity),
            tuple(sorted(self.overrides.items())),
            tuple(self.species[k] for k in sorted(self.species)),
        )


class Analyzer:
    def __init__(self, tree: SyntaxTree, overrides: Optional[dict[str, float]] = None):
        self.tree = tree
        self.overrides = dict(overrides or {})
        self.ptypes: dict[str, ParticleTypeDef] = {t.name: t for t in BUILTIN_PARTICLE_TYPES}
        self.ptype_order: list[str] = [t.name for t in BUILTIN_PARTICLE_TYPES]
        self.world = _Scope("world", None)
        self.scopes: dict[str, _Scope] = {"world": self.world}  # + region types
        self.scope_order: list[str] = ["world"]
        self.instances: dict[str, RegionInstanceDef] = {}  # instance name -> def
        self.box = None
        self.params: dict[str, float] = {}
        self.declared_params: set[str] = set()
        self.warnings: list[str] = []
        self._anon_count = 0
        self._unresolved_params: dict[str, Span] = {}

    # -- errors --------------------------------------------------------------

    def _err(self, msg: str, span: Span) -> CompileError:
        return CompileError(msg, span)

    # -- constant expression folding ------------------------------------------

    def const_value(self, expr: Expr, what: str) -> float:
        """Fold an initializer/cutoff expression using literals and params."""
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, Unary) and expr.op == "-":
            return -self.const_value(expr.operand, what)
        if isinstance(expr, Binary) and expr.op in ("+", "-", "*", "/", "**"):
            a = self.const_value(expr.lhs, what)
            b = self.const_value(expr.rhs, what)
            return {"+": a + b, "-": a - b, "*": a * b, "/": a / b, "**": a**b}[expr.op]
        if isinstance(expr, PathExpr) and len(expr.segments) == 1 and expr.index is None:
            name = expr.segments[0]
            if name in self.params:
                return self.params[name]
            raise self._err(f"{what} must be a constant; {name!r} is not a parameter", expr.span)
        raise self._err(f"{what} must be a constant expression", getattr(expr, "span", Span("?", 0, 0)))

    def const_vec(self, expr: Expr, what: str) -> tuple[float, float, float]:
        if isinstance(expr, VectorLit) and len(expr.elements) == 3:
            return tuple(self.const_value(e, what) for e in expr.elements)
        raise self._err(f"{what} must be a 3-component vector literal", getattr(expr, "span", Span("?", 0, 0)))

    # -- pass 1: types ----------------------------------------------------------

    def collect_types(self) -> None:
        for decl in self.tree.declarations:
            if isinstance(decl, ParamDecl):
                if decl.name in self.declared_params:
                    raise self._err(f"duplicate parameter {decl.name!r}", decl.span)
                self.declared_params.add(decl.name)
                if decl.name in self.overrides:
                    self.params[decl.name] = float(self.overrides[decl.name])
                elif decl.default is not None:
                    self.params[decl.name] = self.const_value(decl.default, f"parameter {decl.name}")
                else:
                    raise self._err(
                        f"parameter {decl.name!r} has no default and no override", decl.span
                    )
        for name, value in self.overrides.items():
            if name not in self.declared_params:
                raise self._err(f"override for undeclared parameter {name!r}", Span("<cli>", 0, 0))
        for key, default in ENGINE_PARAM_DEFAULTS.items():
            self.params.setdefault(key, default)

        for decl in self.tree.declarations:
            if isinstance(decl, TypeDecl):
                self._collect_type(decl)

    def _root_base(self, name: str, span: Span) -> str:
        seen = set()
        cur = name
        while True:
            if cur in ("particle", "MaterialRegion"):
                return cur
            if cur in seen:
                raise self._err(f"type cycle through {cur!r}", span)
            seen.add(cur)
            if cur in self.ptypes:
                cur = self.ptypes[cur].base or "particle"
            elif cur in self.scopes:
                return "MaterialRegion"
            else:
                raise self._err(f"unknown base type {cur!r}", span)

    def _collect_type(self, decl: TypeDecl) -> None:
        if decl.name in self.ptypes or decl.name in self.scopes or decl.name == "MaterialRegion":
            raise self._err(f"duplicate type {decl.name!r}", decl.span)
        base = decl.base or "particle"
        root = self._root_base(base, decl.span)
        if root == "particle":
            self._collect_particle_type(decl, base)
        else:
            self._collect_region_type(decl, base)

    def _attr_from_init(self, name: str, init: Initializer, span: Span) -> Optional[AttrDef]:
        if init.type_name not in _ATTR_KINDS:
            return None
        kind = init.type_name
        if kind in ("conc", "amount"):
            value = 0.0
            if init.args:
                value = self.const_value(init.args[0], f"{kind} initial value")
            return AttrDef(name, kind, value, const=init.const)
        if kind == "site":
            state = "empty"
            if init.args:
                if not (isinstance(init.args[0], PathExpr) and init.args[0].segments == ("empty",)):
                    raise self._err("a site initializer must be `empty`", span)
            return AttrDef(name, "site", state, const=init.const)
        # enum: states listed as bare names, first is the initial state
        values = []
        for a in init.args:
            if not (isinstance(a, PathExpr) and len(a.segments) == 1):
                raise self._err("enum states must be bare names", span)
            values.append(a.segments[0])
        if not values:
            raise self._err("an enum needs at least one state", span)
        return AttrDef(name, "enum", values[0], const=init.const, values=tuple(values))

    def _collect_particle_type(self, decl: TypeDecl, base: str) -> None:
        parent = self.ptypes.get(base)
        radius = parent.radius if parent else None
        mass = parent.mass if parent else 1.0
        attrs = {a.name: a for a in (parent.attrs if parent else ())}
        for m in decl.members:
            if not isinstance(m, FieldDecl):
                raise self._err("a particle type may only declare attributes", m.span)
            if m.name == "radius":
                radius = self.const_value(m.init.value, "radius")
            elif m.name == "mass":
                mass = self.const_value(m.init.value, "mass")
            else:
                attr = self._attr_from_init(m.name, m.init, m.span)
                if attr is None:
                    raise self._err(
                        f"attribute {m.name!r} must be conc, amount, site, or enum", m.span
                    )
                if m.name in attrs and attrs[m.name].implicit is None:
                    raise self._err(f"duplicate attribute {m.name!r}", m.span)
                attrs[m.name] = attr
        for a in attrs.values():
            if a.kind == "conc" and radius is None:
                raise self._err(
                    f"type {decl.name!r} carries concentration {a.name!r} but has no "
                    "radius, so it has no volume; use amount or set a radius",
                    decl.span,
                )
        self.ptypes[decl.name] = ParticleTypeDef(
            decl.name, base, radius, mass, tuple(attrs.values())
        )
        self.ptype_order.append(decl.name)

    def _collect_region_type(self, decl: TypeDecl, base: str) -> None:
        scope = _Scope(decl.name, self.world)
        if base != "MaterialRegion":
            parent = self.scopes.get(base)
            if parent is None:
                raise self._err(f"unknown region base {base!r}", decl.span)
            scope.scalars.update(parent.scalars)
            scope.surface_stiffness = parent.surface_stiffness
            scope.volume_stiffness = parent.volume_stiffness
            for name, coll in parent.collections.items():
                copied = _Coll(
                    f"{decl.name}.{name}",
                    coll.kind,
                    coll.particle_type,
                    sphere=coll.sphere,
                    position=coll.position,
                    overrides=tuple(coll.overrides.items()),
                )
                copied.species.update(coll.species)
                scope.collections[name] = copied
        self.scopes[decl.name] = scope
        self.scope_order.append(decl.name)
        for m in decl.members:
            self._region_member(scope, m)

    def _region_member(self, scope: _Scope, m: Declaration) -> None:
        if isinstance(m, ProcDecl):
            scope.procs.append((m, scope))
        elif isinstance(m, LinkDecl):
            scope.links.append((m, scope))
        elif isinstance(m, FillDecl):
            name = m.target.segments[-1] if m.target else "body"
            self._add_fill(scope, name, m.type_init, m.span)
        elif isinstance(m, FieldDecl):
            self._region_field(scope, m.name, m.init, m.span)
        else:
            raise self._err("unsupported declaration inside a region type", m.span)

    def _region_field(self, scope: _Scope, name: str, init: Initializer, span: Span) -> None:
        if name in scope.scalars or name in scope.collections:
            raise self._err(f"duplicate member {name!r} in {scope.name}", span)
        if name == "surfaceStiffness":
            scope.surface_stiffness = self.const_value(init.value, name)
            return
        if name == "volumeStiffness":
            scope.volume_stiffness = self.const_value(init.value, name)
            return
        if init.is_fill:
            self._add_fill(scope, name, init.fill_type(), span)
            return
        attr = self._attr_from_init(name, init, span)
        if attr is not None:
            if attr.kind in ("site", "enum"):
                raise self._err("site/enum attributes belong on particle types", span)
            scope.scalars[name] = attr
            return
        if init.type_name == "Sphere":
            self._add_surface(scope, name, init, span)
            return
        if init.type_name in self.ptypes:
            self._add_single(scope, name, init, span)
            return
        raise self._err(f"cannot interpret member {name!r}", span)

    def _sphere_spec(self, init: Initializer, span: Span) -> SphereSpec:
        values = {}
        for k, v in init.kwargs:
            values[k] = self.const_value(v, k)
        for k, v in init.record:
            if v.value is None:
                raise self._err(f"Sphere {k} must be a number", span)
            values[k] = self.const_value(v.value, k)
        radius = values.get("radius")
        resolution = values.get("resolution", 0)
        if radius is None or radius <= 0:
            raise self._err("Sphere requires a positive radius", span)
        if not _is_int(resolution) or resolution < 0:
            raise self._err("Sphere resolution must be a nonnegative integer", span)
        return SphereSpec(float(radius), int(resolution))

    def _add_surface(self, scope: _Scope, name: str, init: Initializer, span: Span) -> None:
        spec = self._sphere_spec(init, span)
        path = name if scope.name == "world" else f"{scope.name}.{name}"
        # Vertex particles get a quarter-edge radius so they have a volume
        # (hosting concentrations) without overlapping their neighbors.
        edge = spec.radius * 1.0515 / (2**spec.resolution)
        coll = _Coll(path, "surface", "particle", sphere=spec, overrides=(("radius", edge / 4),))
        scope.collections[name] = coll

    def _type_with_overrides(self, init: Initializer, span: Span) -> tuple[str, tuple]:
        if init.type_name is None or init.type_name not in self.ptypes:
            raise self._err(f"unknown particle type {init.type_name!r}", span)
        overrides = []
        for k, v in init.kwargs:
            overrides.append((k, self.const_value(v, k)))
        for k, v in init.record:
            if v.value is None:
                raise self._err(f"override {k!r} must be a number", span)
            overrides.append((k, self.const_value(v.value, k)))
        return init.type_name, tuple(overrides)

    def _add_fill(self, scope: _Scope, name: str, type_init: Initializer, span: Span) -> None:
        if name in scope.collections or name in scope.scalars:
            raise self._err(f"duplicate member {name!r} in {scope.name}", span)
        ptype, overrides = self._type_with_overrides(type_init, span)
        path = name if scope.name == "world" else f"{scope.name}.{name}"
        scope.collections[name] = _Coll(path, "fill", ptype, overrides=overrides)

    def _add_single(self, scope: _Scope, name: str, init: Initializer, span: Span) -> None:
        if name in scope.collections or name in scope.scalars:
            raise self._err(f"duplicate member {name!r} in {scope.name}", span)
        position = (0.0, 0.0, 0.0)
        velocity = (0.0, 0.0, 0.0)
        overrides = []
        args = list(init.args)
        if len(args) == 3:
            position = tuple(self.const_value(a, "position") for a in args)
        elif args:
            raise self._err("a particle takes 3 positional coordinates", span)
        for k, v in init.kwargs:
            if k == "origin":
                position = self.const_vec(v, "origin")
            else:
                overrides.append((k, self.const_value(v, k)))
        inline_attrs = []
        for k, v in init.record:
            if k == "origin":
                if v.value is None:
                    raise self._err("origin must be a vector", span)
                position = self.const_vec(v.value, "origin")
                continue
            if v.value is not None:
                overrides.append((k, self.const_value(v.value, k)))
                continue
            attr = self._attr_from_init(k, v, span)
            if attr is None:
                raise self._err(f"cannot interpret field {k!r}", span)
            inline_attrs.append(attr)
        path = name if scope.name == "world" else f"{scope.name}.{name}"
        coll = _Coll(
            path,
            "single",
            init.type_name,
            position=position,
            velocity=velocity,
            overrides=tuple(overrides),
        )
        for attr in inline_attrs:
            coll.species[attr.name] = attr
        scope.collections[name] = coll

    # -- pass 2: world declarations ------------------------------------------------

    def collect_world(self) -> None:
        for decl in self.tree.declarations:
            if isinstance(decl, (TypeDecl, ParamDecl)):
                continue
            if isinstance(decl, ProcDecl):
                self.world.procs.append((decl, self.world))
            elif isinstance(decl, LinkDecl):
                self.world.links.append((decl, self.world))
            elif isinstance(decl, FillDecl):
                self._world_fill(decl)
            elif isinstance(decl, InstanceDecl):
                self._world_instance(decl)
            else:
                raise self._err("unsupported top-level declaration", decl.span)

    def _world_fill(self, decl: FillDecl) -> None:
        segs = decl.target.segments
        if len(segs) == 1:
            self._add_fill(self.world, segs[0], decl.type_init, decl.span)
            return
        # `mycell.body:fill(type=Water);` amends the instance's region type.
        scope = self._instance_scope(segs[0], decl.span)
        self._add_fill(scope, segs[1], decl.type_init, decl.span)

    def _instance_scope(self, name: str, span: Span) -> _Scope:
        inst = self.instances.get(name)
        if inst is None:
            raise self._err(f"unknown instance {name!r}", span)
        others = [i for i in self.instances.values() if i.type_name == inst.type_name]
        if len(others) > 1:
            raise self._err(
                f"cannot amend {name!r}: type {inst.type_name!r} has several instances",
                span,
            )
        return self.scopes[inst.type_name]

    def _world_instance(self, decl: InstanceDecl) -> None:
        init = decl.init
        if decl.target is None:
            self._anon_count += 1
            name = f"region{self._anon_count}"
        else:
            if len(decl.target.segments) > 1:
                self._attach_species(decl)
                return
            name = decl.target.segments[0]
        if name in self.instances or name in self.world.collections or name in self.world.scalars:
            raise self._err(f"duplicate instance {name!r}", decl.span)

        if name == "world" and init.type_name == "Box":
            lo = hi = None
            for k, v in init.record:
                if v.value is None:
                    raise self._err("Box bounds must be vectors", decl.span)
                if k == "min":
                    lo = self.const_vec(v.value, "min")
                elif k == "max":
                    hi = self.const_vec(v.value, "max")
            for k, v in init.kwargs:
                if k == "min":
                    lo = self.const_vec(v, "min")
                elif k == "max":
                    hi = self.const_vec(v, "max")
            if lo is None or hi is None or any(h <= l for l, h in zip(lo, hi)):
                raise self._err("Box requires min and max with max > min", decl.span)
            self.box = (lo, hi)
            return

        if init.type_name is None:
            attr = self._attr_from_init(name, init, decl.span)
            if attr is None:
                raise self._err(f"cannot interpret declaration of {name!r}", decl.span)
            self.world.scalars[name] = attr
            return
        if init.type_name in _ATTR_KINDS:
            attr = self._attr_from_init(name, init, decl.span)
            if attr.kind in ("site", "enum"):
                raise self._err("site/enum attributes belong on particle types", decl.span)
            self.world.scalars[name] = attr
            return
        if init.type_name in self.ptypes:
            self._add_single(self.world, name, init, decl.span)
            return
        if init.type_name == "MaterialRegion" or init.type_name in self.scopes:
            self._region_instance(name, init, decl.span)
            return
        raise self._err(f"unknown type {init.type_name!r}", decl.span)

    def _region_instance(self, name: str, init: Initializer, span: Span) -> None:
        origin = (0.0, 0.0, 0.0)
        type_name = init.type_name
        if type_name == "MaterialRegion":
            # Anonymous/inline region: the record declares the members.
            type_name = f"{name}_type"
            scope = _Scope(type_name, self.world)
            self.scopes[type_name] = scope
            self.scope_order.append(type_name)
            for k, v in init.record:
                if k == "origin":
                    origin = self.const_vec(v.value, "origin")
                    continue
                self._region_field(scope, k, v, span)
        else:
            for k, v in init.record:
                if k == "origin":
                    if v.value is None:
                        raise self._err("origin must be a vector", span)
                    origin = self.const_vec(v.value, "origin")
                else:
                    raise self._err(
                        f"unsupported instance field {k!r} (only origin)", span
                    )
            for k, v in init.kwargs:
                if k == "origin":
                    origin = self.const_vec(v, "origin")
                else:
                    raise self._err(f"unsupported instance field {k!r}", span)
        self.instances[name] = RegionInstanceDef(name, type_name, origin)

    def _attach_species(self, decl: InstanceDecl) -> None:
        """`mycell.surface.ARecpt:conc(0.0);` attaches a per-particle column;
        `mycell.Rho:conc(...)` would attach a region scalar."""
        segs = decl.target.segments
        attr = self._attr_from_init(segs[-1], decl.init, decl.span)
        if attr is None or attr.kind in ("site", "enum"):
            raise self._err("only conc/amount can be attached by path", decl.span)
        scope = self._instance_scope(segs[0], decl.span)
        if len(segs) == 2:
            if segs[1] in scope.scalars:
                raise self._err(f"duplicate scalar {segs[1]!r}", decl.span)
            scope.scalars[segs[1]] = attr
            return
        if len(segs) == 3:
            coll = scope.collections.get(segs[1])
            if coll is None:
                raise self._err(f"{segs[0]!r} has no member {segs[1]!r}", decl.span)
            if attr.name in coll.species:
                raise self._err(f"duplicate attribute {attr.name!r} on {coll.path}", decl.span)
            self._check_conc_host(attr, coll, decl.span)
            coll.species[attr.name] = attr
            return
        raise self._err("attachment paths have at most three segments", decl.span)

    def _coll_radius(self, coll: _Coll) -> Optional[float]:
        r = coll.overrides.get("radius")
        if r is not None:
            return r
        return self.ptypes[coll.particle_type].radius

    def _check_conc_host(self, attr: AttrDef, coll: _Coll, span: Span) -> None:
        if attr.kind == "conc" and self._coll_radius(coll) is None:
            raise self._err(
                f"concentration {attr.name!r} needs a host with volume; particles of "
                f"{coll.path!r} have no radius",
                span,
            )

    # -- pass 3: implicit species from proc terms ------------------------------------

    def declare_implicit(self) -> list[tuple[str, str, str]]:
        """Give every species term a declaration.  Undeclared output names get
        implicit conc(0) entries on their host (the documented convenience);
        bare input names still undeclared after that are enriched the same way
        but tracked with input provenance.  Returns (owner, name, provenance)."""
        added = []
        for prov, pick in (("output", lambda p: p.outputs), ("input", lambda p: p.inputs)):
            for scope_name in self.scope_order:
                scope = self.scopes[scope_name]
                for proc, host in scope.procs:
                    for term in pick(proc):
                        if isinstance(term, LinkTerm) or term.path is None:
                            continue
                        entry = self._implicit_for_term(term, host, prov)
                        if entry is not None:
                            added.append(entry)
        return added

    def _find_species_global(self, name: str) -> list[tuple[str, str]]:
        hits = []
        for sname in self.scope_order:
            scope = self.scopes[sname]
            if name in scope.scalars:
                hits.append((sname, name))
            for member in sorted(scope.collections):
                coll = scope.collections[member]
                if name in coll.species or self.ptypes[coll.particle_type].attr(name):
                    hits.append((coll.path, name))
        return hits

    def _implicit_for_term(self, term: Term, host: _Scope, prov: str):
        path = term.path
        segs = path.segments
        if len(segs) == 1:
            name = segs[0]
            if name in self.ptypes or name in self.instances:
                return None  # object term
            if name in host.scalars or (host.parent and name in host.parent.scalars):
                return None
            if self._find_species_global(name):
                return None
            host.scalars[name] = AttrDef(name, "conc", 0.0, implicit=prov)
            return (host.name, name, prov)
        target = self._resolve_collection_path(segs[:-1], host, path.span, soft=True)
        if target is None:
            return None
        coll, _ = target
        name = segs[-1]
        ptype = self.ptypes[coll.particle_type]
        if name in coll.species or ptype.attr(name) is not None:
            return None
        attr = AttrDef(name, "conc", 0.0, implicit=prov)
        self._check_conc_host(attr, coll, path.span)
        coll.species[name] = attr
        return (coll.path, name, prov)

    def _resolve_collection_path(self, segs, host: _Scope, span: Span, soft=False):
        """Resolve a dotted prefix to a collection.  Returns (collection,
        owner scope) or None when soft and unresolvable."""
        head = segs[0]
        if head in self.instances:
            scope = self.scopes[self.instances[head].type_name]
            if len(segs) == 1:
                if soft:
                    return None
                raise self._err(f"{head!r} is a region, not a collection", span)
            coll = scope.collections.get(segs[1])
            if coll is None or len(segs) > 2:
                if soft:
                    return None
                raise self._err(f"no collection {'.'.join(segs)!r}", span)
            return coll, scope
        if head in self.scopes and head != "world":
            scope = self.scopes[head]
            if len(segs) == 2 and segs[1] in scope.collections:
                return scope.collections[segs[1]], scope
            if soft:
                return None
            raise self._err(f"no collection {'.'.join(segs)!r}", span)
        if len(segs) == 1 and head in host.collections:
            return host.collections[head], host
        if len(segs) == 1 and head in self.world.collections:
            return self.world.collections[head], self.world
        if len(segs) == 1 and head in self.ptypes:
            # A particle type stands for its unique collection of that type.
            hits = []
            for sname in self.scope_order:
                scope = self.scopes[sname]
                for member in sorted(scope.collections):
                    coll = scope.collections[member]
                    if coll.particle_type == head:
                        hits.append((coll, scope))
            if len(hits) == 1:
                return hits[0]
            if len(hits) > 1 and not soft:
                raise self._err(
                    f"type {head!r} is ambiguous here: {len(hits)} collections use it", span
                )
        if soft:
            return None
        raise self._err(f"no collection {'.'.join(segs)!r}", span)

    # -- species table -------------------------------------------------------------

    def build_species(self) -> list[SpeciesDef]:
        out = []
        for scope_name in self.scope_order:
            scope = self.scopes[scope_name]
            for name in sorted(scope.scalars):
                a = scope.scalars[name]
                out.append(
                    SpeciesDef(scope_name, name, a.kind, float(a.init), a.const, False, a.implicit)
                )
        for scope_name in self.scope_order:
            scope = self.scopes[scope_name]
            for member in sorted(scope.collections):
                coll = scope.collections[member]
                ptype = self.ptypes[coll.particle_type]
                for a in ptype.attrs:
                    if a.kind in ("conc", "amount"):
                        out.append(
                            SpeciesDef(coll.path, a.name, a.kind, float(a.init), a.const, True, a.implicit)
                        )
                for name in sorted(coll.species):
                    a = coll.species[name]
                    if a.kind in ("conc", "amount"):
                        out.append(
                            SpeciesDef(coll.path, name, a.kind, float(a.init), a.const, True, a.implicit)
                        )
        return out

    # -- term resolution ------------------------------------------------------------

    def _term_species(self, term: Term, host: _Scope):
        """Resolve a species term to (owner, name) or None if it is an object
        term (particle type / instance)."""
        segs = term.path.segments
        if len(segs) == 1:
            name = segs[0]
            if name in self.ptypes or name in self.instances:
                return None
            if name in host.scalars:
                return (host.name, name)
            for member in sorted(host.collections):
                coll = host.collections[member]
                if name in coll.species or self.ptypes[coll.particle_type].attr(name):
                    return (coll.path, name)
            if name in self.world.scalars:
                return ("world", name)
            hits = self._find_species_global(name)
            if len(hits) == 1:
                return hits[0]
            if len(hits) > 1:
                owners = ", ".join(owner for owner, _ in hits)
                raise self._err(f"{name!r} is ambiguous: declared on {owners}", term.path.span)
            return None
        target = self._resolve_collection_path(segs[:-1], host, term.path.span, soft=True)
        if target is not None:
            coll, _ = target
            name = segs[-1]
            if name in coll.species or self.ptypes[coll.particle_type].attr(name):
                return (coll.path, name)
        if len(segs) == 2 and segs[0] in self.instances:
            scope = self.scopes[self.instances[segs[0]].type_name]
            if segs[1] in scope.scalars:
                return (scope.name, segs[1])
        raise self._err(f"cannot resolve {term.path.dotted()!r}", term.path.span)

    def _species_def(self, key, species_by_key) -> SpeciesDef:
        sd = species_by_key.get(key)
        if sd is None:
            raise self._err(f"unknown species {key[0]}.{key[1]}", Span("?", 0, 0))
        return sd

    # -- proc compilation -------------------------------------------------------------

    def compile_procs(self, species: list[SpeciesDef]):
        species_by_key = {s.key: s for s in species}
        transforms, rates, fluxes, discretes = [], [], [], []
        counters = {"v": 0, "r": 0, "f": 0, "d": 0}

        def next_name(prefix, given):
            counters[prefix] += 1
            return given or f"{prefix}{counters[prefix]}"

        for scope_name in self.scope_order:
            scope = self.scopes[scope_name]
            for proc, host in scope.procs:
                kind = self._classify(proc, host)
                if kind == "discrete":
                    discretes.append(self._compile_discrete(proc, host, next_name("d", proc.name)))
                elif kind == "flux":
                    fluxes.append(
                        self._compile_flux(proc, host, species_by_key, next_name("f", proc.name))
                    )
                elif kind == "transform":
                    transforms.append(
                        self._compile_transform(proc, host, species_by_key, next_name("v", proc.name))
                    )
                else:
                    rates.append(
                        self._compile_rate(proc, host, species_by_key, next_name("r", proc.name))
                    )
        return transforms, rates, fluxes, discretes

    def _is_object_term(self, term, host: _Scope) -> bool:
        if isinstance(term, LinkTerm):
            return True
        if term.with_updates is not None or term.constraints:
            return True
        if term.path is None:
            return True
        segs = term.path.segments
        if len(segs) == 1 and (segs[0] in self.ptypes or segs[0] in self.instances):
            return True
        return False

    def _classify(self, proc: ProcDecl, host: _Scope) -> str:
        if any(self._is_object_term(t, host) for t in list(proc.inputs) + list(proc.outputs)):
            return "discrete"
        ins = [self._term_species(t, host) for t in proc.inputs]
        outs = [self._term_species(t, host) for t in proc.outputs]
        if any(k is None for k in ins + outs):
            return "discrete"
        if (
            len(ins) == 1
            and len(outs) == 1
            and ins[0][1] == outs[0][1]
            and proc.inputs[0].binder is not None
            and proc.outputs[0].binder is not None
            and (ins[0] != outs[0] or self._is_per_particle(ins[0], host))
        ):
            return "flux"
        if not ins:
            return "rate"
        return "transform"

    def _is_per_particle(self, key, host: _Scope) -> bool:
        owner = key[0]
        return owner not in self.scopes  # collection paths are not scope names

    def _host_of_keys(self, keys, span: Span) -> str:
        owners = sorted({k[0] for k in keys})
        if len(owners) > 1:
            raise self._err(
                f"a transformation must stay in one scope; found {', '.join(owners)}", span
            )
        return owners[0]

    def _compile_transform(self, proc, host, species_by_key, name) -> TransformProc:
        if proc.body is None:
            raise self._err("a continuous transformation needs a rate body", proc.span)
        reactants, products = [], []
        binders = {}
        kinds = set()
        for term_list, acc in ((proc.inputs, reactants), (proc.outputs, products)):
            for t in term_list:
                key = self._term_species(t, host)
                sd = self._species_def(key, species_by_key)
                kinds.add(sd.kind)
                acc.append((key, t.coef))
                if t.binder:
                    binders[t.binder] = key
        if kinds == {"conc", "amount"}:
            raise self._err("cannot mix conc and amount species in one process", proc.span)
        owner = self._host_of_keys([k for k, _ in reactants + products], proc.span)
        if proc.when is not None or proc.while_ is not None:
            raise self._err("transformation processes take no when/while predicate", proc.span)
        rate = self._compile_body(
            proc.body, host, owner, binders, spatial=False, binder_mode="alias"
        )
        return TransformProc(name, owner, tuple(reactants), tuple(products), rate, proc.span)

    def _compile_rate(self, proc, host, species_by_key, name) -> RateProc:
        if proc.body is None:
            raise self._err("a rate process needs a body", proc.span)
        outputs = []
        binders = {}
        for t in proc.outputs:
            key = self._term_species(t, host)
            self._species_def(key, species_by_key)
            outputs.append((key, t.coef))
            if t.binder:
                binders[t.binder] = key
        owner = self._host_of_keys([k for k, _ in outputs], proc.span)
        gate = None
        if proc.when is not None:
            gate = self._compile_body(proc.when, host, owner, binders, spatial=True)
        body = self._compile_body(proc.body, host, owner, binders, spatial=True)
        return RateProc(name, owner, tuple(outputs), body, gate, proc.span)

    def _compile_flux(self, proc, host, species_by_key, name) -> FluxProc:
        if proc.body is None:
            raise self._err("a flux process needs a rate body", proc.span)
        src = self._term_species(proc.inputs[0], host)
        dst = self._term_species(proc.outputs[0], host)
        s_src = self._species_def(src, species_by_key)
        s_dst = self._species_def(dst, species_by_key)
        if s_src.kind != s_dst.kind:
            raise self._err("flux endpoints must share a unit (conc or amount)", proc.span)
        binders = {
            proc.inputs[0].binder: src,
            proc.outputs[0].binder: dst,
        }
        cutoff = self._distance_cutoff(proc.when, set(binders), proc.span, required=True)
        body = self._compile_body(proc.body, host, src[0], binders, spatial=True)
        return FluxProc(name, src, dst, cutoff, body, proc.span)

    def _distance_cutoff(self, when, binder_names, span, required) -> Optional[float]:
        """Extract c from `when (dist(a,b) < c)`; pair predicates ride the
        neighbor index, so only this shape is accepted."""
        if when is None:
            if required:
                raise self._err("this process needs a `when (dist(a,b) < c)` cutoff", span)
            return None
        if (
            isinstance(when, Binary)
            and when.op in ("<", "<=")
            and isinstance(when.lhs, Call)
            and when.lhs.func == "dist"
        ):
            args = self._dist_args(when.lhs)
            if all(isinstance(a, PathExpr) and a.segments[0] in binder_names for a in args):
                return self.const_value(when.rhs, "distance cutoff")
        if required:
            raise self._err("the when-predicate must have the form dist(a,b) < c", span)
        return None

    def _dist_args(self, call: Call) -> list[Expr]:
        if len(call.args) == 2:
            return list(call.args)
        # `dist(a-b)` appears in one listing; read it as dist(a, b).
        if len(call.args) == 1 and isinstance(call.args[0], Binary) and call.args[0].op == "-":
            return [call.args[0].lhs, call.args[0].rhs]
        raise self._err("dist() takes two locations", call.span)

    def _compile_discrete(self, proc, host, name) -> DiscreteProcDef:
        inputs = []
        binder_types = {}
        for t in proc.inputs:
            if isinstance(t, LinkTerm) or t.path is None:
                raise self._err("discrete inputs must name an object type", t.span)
            tname = t.path.segments[0]
            if len(t.path.segments) != 1 or tname not in self.ptypes:
                raise self._err(f"{t.path.dotted()!r} is not a particle type", t.path.span)
            constraints = []
            ptype = self.ptypes[tname]
            for attr, value in t.constraints:
                adef = ptype.attr(attr)
                if adef is None:
                    raise self._err(f"type {tname!r} has no attribute {attr!r}", t.span)
                constraints.append((attr, self._state_name(adef, value, t.span)))
            if t.coef != 1:
                raise self._err("discrete inputs use one term per object", t.span)
            inputs.append(PatternTerm(t.binder, tname, tuple(constraints)))
            if t.binder:
                binder_types[t.binder] = tname
        outputs = []
        for t in proc.outputs:
            if isinstance(t, LinkTerm):
                outputs.append(self._compile_link_out(t, binder_types, host))
                continue
            if t.with_updates is not None or (t.binder and t.path is None):
                bname = t.binder
                if bname not in binder_types:
                    raise self._err(f"output binder {bname!r} is not an input", t.span)
                ptype = self.ptypes[binder_types[bname]]
                updates = []
                for attr, value in t.with_updates or ():
                    adef = ptype.attr(attr)
                    if adef is None:
                        raise self._err(f"type {ptype.name!r} has no attribute {attr!r}", t.span)
                    updates.append((attr, self._state_name(adef, value, t.span)))
                outputs.append(UpdateOut(bname, tuple(updates)))
                continue
            segs = t.path.segments
            if len(segs) == 1 and segs[0] in binder_types and t.binder is None:
                outputs.append(UpdateOut(segs[0], ()))  # pass-through
                continue
            if len(segs) == 1 and segs[0] in self.ptypes:
                outputs.append(CreateOut(segs[0], t.coef))
                continue
            raise self._err(f"cannot interpret discrete output {t.path.dotted()!r}", t.span)
        cutoff = None
        when = None
        if proc.when is not None:
            cutoff = self._distance_cutoff(
                proc.when, set(binder_types), proc.span, required=len(inputs) >= 2
            )
            if cutoff is None:
                when = self._compile_body(proc.when, host, None, {}, spatial=True,
                                          object_binders=binder_types)
        elif len(inputs) >= 2:
            raise self._err("a multi-object process needs a distance when-predicate", proc.span)
        prob = None
        if proc.body is not None:
            prob = self._compile_body(proc.body, host, None, {}, spatial=True,
                                      object_binders=binder_types, allow_rand=True)
        return DiscreteProcDef(
            name, tuple(inputs), tuple(outputs), cutoff, when, prob, proc.span
        )

    def _state_name(self, adef: AttrDef, value: Expr, span: Span) -> str:
        if not (isinstance(value, PathExpr) and len(value.segments) == 1):
            raise self._err("attribute states are bare names", span)
        state = value.segments[0]
        if adef.kind == "site":
            if state not in ("empty", "bound"):
                raise self._err(f"a site is `empty` or `bound`, not {state!r}", span)
        elif adef.kind == "enum":
            if state not in adef.values:
                raise self._err(
                    f"{state!r} is not a state of enum {adef.name!r} {adef.values}", span
                )
        else:
            raise self._err(f"attribute {adef.name!r} has no symbolic states", span)
        return state

    def _compile_link_out(self, t: LinkTerm, binder_types, host) -> LinkOut:
        sites = []
        for site in t.sites:
            if len(site.segments) != 2 or site.segments[0] not in binder_types:
                raise self._err("link sites are written binder.site", site.span)
            bname, attr = site.segments
            adef = self.ptypes[binder_types[bname]].attr(attr)
            if adef is None or adef.kind != "site":
                raise self._err(f"{attr!r} is not a site attribute", site.span)
            sites.append((bname, attr))
        if t.force is None:
            raise self._err("a link output needs a force body", t.span)
        force = self._compile_body(
            t.force, host, None, {}, spatial=True, object_binders=binder_types
        )
        return LinkOut(tuple(sites), force)

    # -- link rules ---------------------------------------------------------------

    def compile_links(self) -> list[LinkRule]:
        rules = []
        n = 0
        for scope_name in self.scope_order:
            scope = self.scopes[scope_name]
            for link, host in scope.links:
                n += 1
                rules.append(self._compile_link(link, host, f"link{n}"))
        return rules

    def _endpoint(self, term: Term, host: _Scope) -> Endpoint:
        if term.path is None:
            raise self._err("link participants name collections or objects", term.span)
        segs = term.path.segments
        if term.path.index is not None:
            if segs != ("BoundingPlanes",) or term.path.index not in PLANE_NAMES:
                raise self._err(
                    f"unknown plane {term.path.dotted()!r}; planes are "
                    f"BoundingPlanes[{'|'.join(PLANE_NAMES)}]",
                    term.path.span,
                )
            if self.box is None:
                raise self._err(
                    "BoundingPlanes need world bounds: declare `world:Box{min:[...]; max:[...]};`",
                    term.path.span,
                )
            return Endpoint(term.binder, ("plane", term.path.index))
        target = self._resolve_collection_path(segs, host, term.path.span, soft=True)
        if target is not None:
            coll, _ = target
            kind = "single" if coll.kind == "single" else "collection"
            return Endpoint(term.binder, (kind, coll.path))
        if len(segs) == 1 and segs[0] in self.ptypes:
            return Endpoint(term.binder, ("type", segs[0]))
        raise self._err(f"cannot resolve link participant {term.path.dotted()!r}", term.path.span)

    def _compile_link(self, link: LinkDecl, host: _Scope, name: str) -> LinkRule:
        endpoints = tuple(self._endpoint(t, host) for t in link.participants)
        if len(endpoints) != 2:
            raise self._err("links connect exactly two participants", link.span)
        binders = {e.binder for e in endpoints if e.binder}
        attach = detach = None
        if link.when is not None:
            attach = self._distance_cutoff(link.when, binders, link.span, required=True)
        if link.while_ is not None:
            detach = self._distance_cutoff(link.while_, binders, link.span, required=True)
        binder_types = {e.binder: None for e in endpoints if e.binder}
        # Non-local symbols in the force body search the participants' region.
        env = host
        for e in endpoints:
            if e.target[0] in ("collection", "single"):
                env = self._owner_scope(e.target[1], host)
                if env.name != "world":
                    break
        force = self._compile_body(
            link.force, env, None, {}, spatial=True, object_binders=binder_types
        )
        return LinkRule(name, endpoints, attach, detach, force, link.when is None, link.span)

    # -- expression body compilation ----------------------------------------------

    def _owner_scope(self, owner: Optional[str], host: _Scope) -> _Scope:
        """The scope whose environment encloses the evaluation subject."""
        if owner is None:
            return host
        if owner in self.scopes:
            return self.scopes[owner]
        for scope in self.scopes.values():
            for coll in scope.collections.values():
                if coll.path == owner:
                    return scope
        return host

    def _compile_body(
        self,
        expr: Expr,
        host: _Scope,
        owner: Optional[str],
        binders: dict,
        spatial: bool,
        object_binders: Optional[dict] = None,
        allow_rand: bool = False,
        binder_mode: str = "value",
    ) -> Program:
        """Compile a body; `binders` maps names to species keys, and
        `object_binders` maps names to particle types (or None) for
        position-bearing binders.  binder_mode "alias" resolves binders to
        their species (transformations); "value" keeps per-subject slots."""
        object_binders = object_binders or {}
        binder_ix = {b: i for i, b in enumerate(list(binders) + list(object_binders))}
        env = self._owner_scope(owner, host)

        def resolve(node):
            if isinstance(node, Call):
                if node.func == "dist":
                    if not spatial:
                        raise self._err("dist() needs spatial context", node.span)
                    a, b = (self._dist_operand(x, binder_ix, env) for x in self._dist_args(node))
                    return ("dist", a, b)
                if node.func == "rand":
                    if not allow_rand:
                        raise self._err(
                            "rand() is only available in discrete probability bodies", node.span
                        )
                    return ("rand",)
                raise self._err(f"unknown function {node.func!r}", node.span)
            assert isinstance(node, PathExpr)
            res = self.resolve_symbol(node, env, owner, binders, object_binders, spatial)
            if res.kind == "unresolved":
                raise self._err(
                    f"cannot resolve {node.dotted()!r}; searched {', '.join(res.trace)}",
                    node.span,
                )
            if res.kind == "binder":
                if binder_mode == "alias" and res.name in binders:
                    key = binders[res.name]
                    if self._is_per_particle(key, env):
                        return ("self", key[0], key[1])
                    return ("scalar", key[0], key[1])
                return ("binder", binder_ix[res.name])
            if res.kind == "local-attribute":
                if res.owner in self.scopes:
                    return ("scalar", res.owner, res.name)
                return ("self", res.owner, res.name)
            if res.kind == "region-scalar":
                return ("scalar", res.owner, res.name)
            if res.kind == "spatial-field":
                return ("field", res.owner, res.name)
            return ("param", res.name)

        return compile_expr(expr, resolve)

    def _dist_operand(self, arg: Expr, binder_ix, host: _Scope):
        if isinstance(arg, VectorLit):
            point = tuple(self.const_value(e, "dist point") for e in arg.elements)
            if len(point) != 3:
                raise self._err("dist points have three components", arg.span)
            return ("point", point)
        if isinstance(arg, PathExpr):
            if len(arg.segments) == 1 and arg.segments[0] in binder_ix:
                return ("binder", binder_ix[arg.segments[0]])
            target = self._resolve_collection_path(arg.segments, host, arg.span, soft=True)
            if target is not None and target[0].kind == "single":
                return ("entity", target[0].path)
            if arg.index is not None and arg.segments == ("BoundingPlanes",):
                return ("plane", arg.index)
        raise self._err(
            "dist() arguments must be bound objects, single particles, or [x,y,z] points",
            getattr(arg, "span", Span("?", 0, 0)),
        )

    def resolve_symbol(
        self,
        path: PathExpr,
        host: _Scope,
        owner: Optional[str],
        binders: dict,
        object_binders: dict,
        spatial: bool,
    ) -> ScopeResolution:
        """The spatial scoping ladder."""
        trace = []
        segs = path.segments
        name = segs[0]
        if len(segs) == 1:
            if name in binders or name in object_binders:
                return ScopeResolution("binder", None, name)
            # local attribute on the evaluation subject
            trace.append(f"attributes of {owner or host.name}")
            if owner is not None and owner not in self.scopes:
                coll = self._coll_by_path(owner)
                if coll is not None and (
                    name in coll.species or self.ptypes[coll.particle_type].attr(name)
                ):
                    return ScopeResolution("local-attribute", owner, name)
            if owner is not None and owner in self.scopes and name in self.scopes[owner].scalars:
                return ScopeResolution("local-attribute", owner, name)
            # enclosing region scalars
            scope = host
            while scope is not None:
                trace.append(f"scalars of {scope.name}")
                if name in scope.scalars:
                    return ScopeResolution("region-scalar", scope.name, name)
                scope = scope.parent
            # spatial fields from sibling collections
            if spatial:
                scope = host
                while scope is not None:
                    trace.append(f"fields of {scope.name}")
                    for member in sorted(scope.collections):
                        coll = scope.collections[member]
                        if name in coll.species or self.ptypes[coll.particle_type].attr(name):
                            return ScopeResolution("spatial-field", coll.path, name)
                    scope = scope.parent
            trace.append("parameters")
            if name in self.params:
                return ScopeResolution("parameter", None, name)
            return ScopeResolution("unresolved", trace=tuple(trace))
        # dotted path: explicit collection species -> field read
        target = self._resolve_collection_path(segs[:-1], host, path.span, soft=True)
        if target is not None:
            coll, _ = target
            leaf = segs[-1]
            if leaf in coll.species or self.ptypes[coll.particle_type].attr(leaf):
                if owner == coll.path:
                    return ScopeResolution("local-attribute", coll.path, leaf)
                if spatial:
                    return ScopeResolution("spatial-field", coll.path, leaf)
                return ScopeResolution("region-scalar", coll.path, leaf)
        if len(segs) == 2 and segs[0] in self.instances:
            scope = self.scopes[self.instances[segs[0]].type_name]
            if segs[1] in scope.scalars:
                return ScopeResolution("region-scalar", scope.name, segs[1])
        return ScopeResolution("unresolved", trace=(path.dotted(),))

    def _coll_by_path(self, path: str) -> Optional[_Coll]:
        for scope in self.scopes.values():
            for coll in scope.collections.values():
                if coll.path == path:
                    return coll
        return None

    # -- assembly -------------------------------------------------------------------

    def run(self) -> CompiledModel:
        self.collect_types()
        self.collect_world()
        self.declare_implicit()
        species = self.build_species()
        transforms, rates, fluxes, discretes = self.compile_procs(species)
        link_rules = self.compile_links()

        # C_f = species referenced by transformations, in table order.
        touched = set()
        for tp in transforms:
            for key, _ in tp.reactants + tp.products:
                touched.add(key)
        network = [s for s in species if s.key in touched]
        rest = [s for s in species if s.key not in touched]
        ordered = network + rest
        stoich = build_stoichiometry(transforms, [s.key for s in network])

        fields = []
        for s in ordered:
            if s.per_particle:
                fields.append(FieldDef(s.owner, s.name))

        world_colls = tuple(
            self.world.collections[k].freeze() for k in sorted(self.world.collections)
        )
        region_types = tuple(
            RegionTypeDef(
                sname,
                tuple(self.scopes[sname].scalars[k] for k in sorted(self.scopes[sname].scalars)),
                tuple(
                    self.scopes[sname].collections[k].freeze()
                    for k in sorted(self.scopes[sname].collections)
                ),
                self.scopes[sname].surface_stiffness,
                self.scopes[sname].volume_stiffness,
            )
            for sname in self.scope_order
            if sname != "world"
        )
        return CompiledModel(
            species=tuple(ordered),
            n_network=len(network),
            stoich=stoich,
            transforms=tuple(transforms),
            rates=tuple(rates),
            fluxes=tuple(fluxes),
            discretes=tuple(discretes),
            link_rules=tuple(link_rules),
            particle_types=tuple(self.ptypes[n] for n in self.ptype_order),
            region_types=region_types,
            region_instances=tuple(self.instances[k] for k in sorted(self.instances)),
            world_collections=world_colls,
            box=self.box,
            params=tuple(sorted(self.params.items())),
            fields=tuple(fields),
            warnings=tuple(self.warnings),
        )


def build_stoichiometry(transforms, species_keys):
    """N[i][j] = net production of species i by transformation j
    (products minus reactants).  Rows of const species are zeroed."""
    index = {k: i for i, k in enumerate(species_keys)}
    rows = [[0] * len(transforms) for _ in species_keys]
    for j, tp in enumerate(transforms):
        for key, coef in tp.products:
            rows[index[key]][j] += coef
        for key, coef in tp.reactants:
            rows[index[key]][j] -= coef
    return tuple(tuple(r) for r in rows)


def zero_const_rows(stoich, species, warnings: list[str]):
    """Const species are boundary values: their rows are forced to zero with
    a warning when a transformation would change them."""
    out = []
    for row, sp in zip(stoich, species):
        if sp.const and any(c != 0 for c in row):
            warnings.append(
                f"species {sp.label} is const but appears with net stoichiometry; row zeroed"
            )
            out.append(tuple(0 for _ in row))
        else:
            out.append(row)
    return tuple(out)


def implicit_declare(tree: SyntaxTree) -> list[tuple[str, str]]:
    """Report the implicit conc entries created for undeclared process output
    names, as (owner, name) pairs."""
    an = Analyzer(tree, _any_params(tree))
    an.collect_types()
    an.collect_world()
    added = an.declare_implicit()
    return [(owner, name) for owner, name, prov in added if prov == "output"]


def _any_params(tree: SyntaxTree) -> dict[str, float]:
    """Dummy bindings so analysis-only helpers do not trip on missing params."""
    return {}


def analyze(tree: SyntaxTree, overrides: Optional[dict[str, float]] = None) -> CompiledModel:
    an = Analyzer(tree, overrides)
    model = an.run()
    warnings = list(model.warnings)
    stoich = zero_const_rows(model.stoich, model.species[: model.n_network], warnings)
    return replace(model, stoich=stoich, warnings=tuple(warnings))


def resolve_spatial(symbol: str, tree: SyntaxTree, host: str = "world",
                    owner: Optional[str] = None) -> ScopeResolution:
    """Resolve one bare symbol against a model, reporting which rung of the
    scoping ladder supplied it."""
    an = Analyzer(tree)
    an.collect_types()
    an.collect_world()
    an.declare_implicit()
    path = PathExpr((symbol,))
    return an.resolve_symbol(path, an.scopes[host], owner, {}, {}, spatial=True)
