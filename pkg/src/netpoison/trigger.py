"""Functionality-preserving trigger injection.

A trigger is a cascade of XOR-with-constant stages cut into a net that feeds
a primary output and already shows full toggle coverage under the available
stimulus. An even stage count makes the cascade the identity function, so the
module's input/output behavior is unchanged while its dataflow graph gains a
recognizable chain of XOR and CONST nodes sized by the attacker.

Vector granularity XORs whole nets stage by stage; bit granularity emits one
single-bit statement per bit per level, multiplying the statement count (and
the DFG growth) by the net width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .dfg import build_dfg
from .netlist import (
    Assign,
    Binary,
    Const,
    LValue,
    Netlist,
    Ref,
    Slice,
    validate,
)
from .sim import CoverageReport

__all__ = [
    "STAGE_PREFIX",
    "TriggerError",
    "TriggerSpec",
    "qualifying_injection_sites",
    "select_injection_net",
    "size_trigger",
    "make_trigger_spec",
    "inject",
    "has_trigger",
]

STAGE_PREFIX = "__bt"


class TriggerError(Exception):
    pass


@dataclass(frozen=True)
class TriggerSpec:
    """Where and how large the cascade is.

    `stages` counts statements: cascade depth at vector granularity,
    depth times width at bit granularity (so stages/width is the even depth).
    `mask` is the per-stage XOR constant; None means all ones. `output` is
    the primary output the cascade end reconnects to.
    """

    target: str
    output: str
    stages: int
    granularity: str = "vector"
    mask: Optional[int] = None

    def depth(self, width: int) -> int:
        if self.granularity == "bit":
            return self.stages // width
        return self.stages

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "output": self.output,
            "stages": self.stages,
            "granularity": self.granularity,
            "mask": self.mask,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TriggerSpec":
        known = ("target", "output", "stages", "granularity", "mask")
        extra = sorted(set(d) - set(known))
        if extra:
            raise TriggerError(f"unknown trigger spec keys: {', '.join(extra)}")
        for key in ("target", "output", "stages"):
            if key not in d:
                raise TriggerError(f"trigger spec is missing {key!r}")
        return cls(
            target=d["target"],
            output=d["output"],
            stages=int(d["stages"]),
            granularity=d.get("granularity", "vector"),
            mask=d.get("mask"),
        )


def _check_spec(n: Netlist, spec: TriggerSpec) -> int:
    """Validate a spec against a netlist; returns the cascade width."""
    port = n.port(spec.output)
    if port is None or port.direction != "output":
        raise TriggerError(f"'{spec.output}' is not an output port")
    if spec.granularity not in ("vector", "bit"):
        raise TriggerError(f"unknown granularity {spec.granularity!r}")
    if spec.target not in n.nets:
        raise TriggerError(f"target net '{spec.target}' is not declared")
    width = n.nets[spec.target]
    if width != port.width:
        raise TriggerError(
            f"target '{spec.target}' ({width} bits) does not match output "
            f"'{spec.output}' ({port.width} bits)")
    if spec.target != spec.output and _buffer_source(n, spec.output) != spec.target:
        raise TriggerError(
            f"target '{spec.target}' does not directly drive output "
            f"'{spec.output}'")
    if spec.granularity == "vector":
        if spec.stages < 2 or spec.stages % 2 != 0:
            raise TriggerError(f"stage count must be even and >= 2, got {spec.stages}")
    else:
        if spec.stages % width != 0:
            raise TriggerError(
                f"bit-granularity stage count {spec.stages} must be a multiple "
                f"of the net width {width}")
        depth = spec.stages // width
        if depth < 2 or depth % 2 != 0:
            raise TriggerError(
                f"stages/width must be even and >= 2, got {depth}")
    if spec.mask is not None and not 0 <= spec.mask < (1 << width):
        raise TriggerError(f"mask {spec.mask:#x} does not fit {width} bits")
    for name in n.nets:
        if name.startswith(STAGE_PREFIX):
            raise TriggerError(
                f"net '{name}' collides with the reserved {STAGE_PREFIX} prefix")
    return width


def _buffer_source(n: Netlist, output: str) -> Optional[str]:
    """The net s when the output is driven exactly by `assign output = s`."""
    found = None
    for a in n.assigns:
        if any(t.net == output for t in a.targets):
            if found is not None:
                return None  # several drivers, not a pure buffer
            found = a
    if found is None or len(found.targets) != 1:
        return None
    t = found.targets[0]
    if t.msb is not None:
        return None
    if not isinstance(found.expr, Ref):
        return None
    return found.expr.net


def qualifying_injection_sites(n: Netlist, cov: CoverageReport) -> list[tuple[str, str]]:
    """(net, output) pairs where a cascade may be cut in: the output itself,
    or the net it buffers, provided the net shows full toggle coverage."""
    sites = []
    for port in n.outputs:
        if cov.toggle.get(port.name, 0.0) == 1.0:
            sites.append((port.name, port.name))
        src = _buffer_source(n, port.name)
        if src is not None and n.nets.get(src) == port.width \
                and cov.toggle.get(src, 0.0) == 1.0:
            sites.append((src, port.name))
    return sites


def select_injection_net(n: Netlist, cov: CoverageReport) -> str:
    """Lexicographically smallest qualifying net. Raises TriggerError when no
    output-feeding net reaches full toggle coverage."""
    sites = qualifying_injection_sites(n, cov)
    if not sites:
        raise TriggerError(
            "no qualifying injection net: no output-feeding net has full "
            "toggle coverage under the given stimulus; enlarge the vector set")
    return min(net for net, _ in sites)


def size_trigger(phi: float, dfg_nodes: int, granularity: str = "vector",
                 width: int = 1) -> int:
    """Stage count for a trigger of at least ceil(phi * dfg_nodes) cascade
    nodes. Each level contributes 2 nodes per statement (XOR + CONST); the
    result is the smallest even level count, expressed in statements
    (levels at vector granularity, levels*width at bit granularity)."""
    if not 0 < phi <= 1:
        raise TriggerError(f"trigger fraction must be in (0, 1], got {phi}")
    if dfg_nodes < 1:
        raise TriggerError("dfg_nodes must be positive")
    if granularity not in ("vector", "bit"):
        raise TriggerError(f"unknown granularity {granularity!r}")
    target_nodes = math.ceil(phi * dfg_nodes)
    per_level = 2 if granularity == "vector" else 2 * width
    levels = max(2, math.ceil(target_nodes / per_level))
    if levels % 2:
        levels += 1
    return levels if granularity == "vector" else levels * width


def make_trigger_spec(n: Netlist, cov: CoverageReport, phi: float,
                      granularity: str = "vector",
                      mask: Optional[int] = None) -> TriggerSpec:
    """Pick the injection site and size the cascade from the trigger fraction."""
    net = select_injection_net(n, cov)
    outputs = sorted(o for s, o in qualifying_injection_sites(n, cov) if s == net)
    width = n.nets[net]
    stages = size_trigger(phi, len(build_dfg(n).nodes), granularity, width)
    return TriggerSpec(target=net, output=outputs[0], stages=stages,
                       granularity=granularity, mask=mask)


def inject(n: Netlist, spec: TriggerSpec) -> Netlist:
    """Cut the cascade into a copy of the netlist. The result validates,
    is equivalent to the original (even stage count), and its DFG grows by
    exactly 2 nodes per stage statement (plus one entry SLICE per bit at bit
    granularity, where the cascade taps a bus)."""
    width = _check_spec(n, spec)
    depth = spec.depth(width)
    mask = spec.mask if spec.mask is not None else (1 << width) - 1

    nets = dict(n.nets)
    assigns = list(n.assigns)

    if spec.target == spec.output:
        # Cut directly at the output: its drivers now feed __bt0.
        entry = f"{STAGE_PREFIX}0"
        nets[entry] = width
        renamed = []
        for a in assigns:
            targets = tuple(replace(t, net=entry) if t.net == spec.output else t
                            for t in a.targets)
            renamed.append(replace(a, targets=targets) if targets != a.targets else a)
        assigns = renamed
    else:
        # The output is a pure buffer of the target; the cascade replaces it.
        entry = spec.target
        assigns = [a for a in assigns
                   if not (len(a.targets) == 1 and a.targets[0].net == spec.output)]

    stage_nets = [entry]
    for i in range(1, depth):
        name = f"{STAGE_PREFIX}{i}"
        nets[name] = width
        stage_nets.append(name)
    stage_nets.append(spec.output)

    for i in range(1, depth + 1):
        src, dst = stage_nets[i - 1], stage_nets[i]
        if spec.granularity == "vector":
            expr = Binary("XOR", Ref(src), Const(width, mask))
            assigns.append(Assign((LValue(dst),), expr))
        else:
            for j in range(width):
                bit = (mask >> j) & 1
                expr = Binary("XOR", Slice(Ref(src), j, j), Const(1, bit))
                assigns.append(Assign((LValue(dst, j, j),), expr))

    out = Netlist(n.name, n.ports, nets, tuple(assigns))
    problems = validate(out)
    if problems:
        raise TriggerError(
            "internal error: injected netlist failed validation: "
            + "; ".join(d.message for d in problems))
    return out


def has_trigger(n: Netlist) -> bool:
    return any(name.startswith(STAGE_PREFIX) for name in n.nets)
