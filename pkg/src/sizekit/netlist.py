"""Parser and emitter for a small SPICE-like netlist dialect.

Supported cards:

* ``M<name> d g s b <model> [k=v ...]``  -- MOS device; model names starting
  with ``p`` are PMOS, everything else NMOS
* ``R<name> a b <value> [k=v ...]``      -- resistor
* ``C<name> a b <value> [k=v ...]``      -- capacitor
* ``I<name> a b [DC] <value>``           -- current source
* ``V<name> a b [DC] <value>``           -- voltage source
* ``X<name> n1 .. nk <subckt> [k=v ...]``-- opaque subcircuit instance
* ``+``  continuation of the previous card
* ``*`` / ``$``  comment lines ($ also starts an inline comment)
* ``.title`` / ``.ground`` directives; any other dot card (``.model``,
  ``.option``, ``.subckt`` bodies, ...) is retained verbatim and re-emitted.

Numeric values accept the usual unit suffixes (f p n u m k meg) and are
resolved to SI floats via decimal exponent shifting, so ``0.18u`` parses to
exactly ``1.8e-7``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Mapping, NamedTuple


class NetlistError(ValueError):
    """Raised for malformed netlist text or inconsistent netlist values."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DeviceKind(str, enum.Enum):
    NMOS = "nmos"
    PMOS = "pmos"
    RESISTOR = "resistor"
    CAPACITOR = "capacitor"
    CURRENT_SOURCE = "current-source"
    VOLTAGE_SOURCE = "voltage-source"
    SUBCKT = "subckt"


class Handle(NamedTuple):
    """A sizable parameter slot, addressed as (device name, parameter name)."""

    device: str
    param: str

    def __str__(self) -> str:
        return f"{self.device}.{self.param}"


# Parameters the sizing layer may touch, per device kind.
SIZABLE_PARAMS: dict[DeviceKind, tuple[str, ...]] = {
    DeviceKind.NMOS: ("W", "L", "M"),
    DeviceKind.PMOS: ("W", "L", "M"),
    DeviceKind.RESISTOR: ("R",),
    DeviceKind.CAPACITOR: ("C",),
    DeviceKind.CURRENT_SOURCE: ("DC",),
    DeviceKind.VOLTAGE_SOURCE: (),
    DeviceKind.SUBCKT: (),
}

_SUFFIXES = {"f": -15, "p": -12, "n": -9, "u": -6, "m": -3, "k": 3, "meg": 6}

_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+(?:\.\d*)?|\.\d+))(?:[eE]([+-]?\d+))?([a-zA-Z]*)$"
)

_TERMINAL_COUNT = {
    DeviceKind.NMOS: 4,
    DeviceKind.PMOS: 4,
    DeviceKind.RESISTOR: 2,
    DeviceKind.CAPACITOR: 2,
    DeviceKind.CURRENT_SOURCE: 2,
    DeviceKind.VOLTAGE_SOURCE: 2,
}

_VALUE_PARAM = {
    DeviceKind.RESISTOR: "R",
    DeviceKind.CAPACITOR: "C",
    DeviceKind.CURRENT_SOURCE: "DC",
    DeviceKind.VOLTAGE_SOURCE: "DC",
}


def parse_value(token: str) -> float:
    """Resolve a numeric token with an optional unit suffix to an SI float.

    The suffix is folded into the decimal exponent before conversion, so the
    result is the correctly rounded double of the written decimal number.
    """
    match = _VALUE_RE.match(token)
    if match is None:
        raise ValueError(f"not a numeric value: {token!r}")
    digits, exponent, suffix = match.groups()
    shift = int(exponent) if exponent else 0
    if suffix:
        key = suffix.lower()
        if key not in _SUFFIXES:
            raise ValueError(f"unknown unit suffix {suffix!r} in {token!r}")
        shift += _SUFFIXES[key]
    try:
        return float(Decimal(digits).scaleb(shift))
    except (InvalidOperation, OverflowError) as exc:
        raise ValueError(f"cannot resolve value {token!r}: {exc}") from None


def format_value(value: float) -> str:
    """Render a float so that parse_value(format_value(x)) == x."""
    return repr(float(value))


@dataclass(frozen=True)
class Device:
    """One netlist element.

    ``terminals`` keeps card order (MOS: drain, gate, source, bulk).
    ``model`` is the MOS model name or subcircuit name, None otherwise.
    """

    name: str
    kind: DeviceKind
    terminals: tuple[str, ...]
    params: Mapping[str, float] = field(default_factory=dict)
    model: str | None = None

    def __post_init__(self):
        if not self.name:
            raise NetlistError("device name must be non-empty")
        expected = _TERMINAL_COUNT.get(self.kind)
        if expected is not None and len(self.terminals) != expected:
            raise NetlistError(
                f"device {self.name}: expected {expected} terminals, "
                f"got {len(self.terminals)} (dangling terminal)"
            )
        if self.kind is DeviceKind.SUBCKT and not self.terminals:
            raise NetlistError(f"device {self.name}: subcircuit instance needs terminals")
        for key, val in self.params.items():
            if not (val > 0 and math.isfinite(val)):
                raise NetlistError(
                    f"device {self.name}: non-positive parameter {key}={val}"
                )

    @property
    def drain(self) -> str:
        return self.terminals[0]

    @property
    def gate(self) -> str:
        return self.terminals[1]

    @property
    def source(self) -> str:
        return self.terminals[2]

    @property
    def bulk(self) -> str:
        return self.terminals[3]

    def is_mos(self) -> bool:
        return self.kind in (DeviceKind.NMOS, DeviceKind.PMOS)


@dataclass(frozen=True)
class Netlist:
    """An immutable parsed netlist.

    Devices are stored sorted by name, which makes emission canonical and
    parse(emit(n)) an identity.  ``directives`` holds unmodeled dot cards
    verbatim, in source order.
    """

    devices: tuple[Device, ...]
    title: str = ""
    ground: str = "0"
    directives: tuple[str, ...] = ()
    nets: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        ordered = tuple(sorted(self.devices, key=lambda d: d.name))
        object.__setattr__(self, "devices", ordered)
        seen: set[str] = set()
        for dev in ordered:
            if dev.name in seen:
                raise NetlistError(f"duplicate device name {dev.name}")
            seen.add(dev.name)
        nets = {t for dev in ordered for t in dev.terminals}
        nets.add(self.ground)
        object.__setattr__(self, "nets", frozenset(nets))

    def device(self, name: str) -> Device:
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise KeyError(name)

    def device_map(self) -> dict[str, Device]:
        return {dev.name: dev for dev in self.devices}

    def sizable_parameters(self) -> list[Handle]:
        """All tunable (device, param) handles in deterministic order."""
        handles: list[Handle] = []
        for dev in self.devices:
            for param in sorted(SIZABLE_PARAMS[dev.kind]):
                handles.append(Handle(dev.name, param))
        return handles


def _device_kind(name: str, model: str | None) -> DeviceKind:
    first = name[0].lower()
    if first == "m":
        if model and model.lower().startswith("p"):
            return DeviceKind.PMOS
        return DeviceKind.NMOS
    return {
        "r": DeviceKind.RESISTOR,
        "c": DeviceKind.CAPACITOR,
        "i": DeviceKind.CURRENT_SOURCE,
        "v": DeviceKind.VOLTAGE_SOURCE,
        "x": DeviceKind.SUBCKT,
    }[first]


def _split_params(tokens: list[str], lineno: int) -> dict[str, float]:
    params: dict[str, float] = {}
    for tok in tokens:
        if "=" not in tok:
            raise NetlistError(f"expected key=value parameter, got {tok!r}", lineno)
        key, _, raw = tok.partition("=")
        if not key or not raw:
            raise NetlistError(f"malformed parameter {tok!r}", lineno)
        try:
            val = parse_value(raw)
        except ValueError as exc:
            raise NetlistError(str(exc), lineno) from None
        key = key.upper()
        if key in params:
            raise NetlistError(f"duplicate parameter {key}", lineno)
        if not val > 0:
            raise NetlistError(f"non-positive parameter {key}={val}", lineno)
        params[key] = val
    return params


def _parse_card(tokens: list[str], lineno: int) -> Device:
    name = tokens[0]
    first = name[0].lower()
    if first in ("m",):
        if len(tokens) < 6:
            raise NetlistError(
                f"device {name}: MOS card needs 4 terminals and a model "
                "(dangling terminal)", lineno,
            )
        nets = tokens[1:5]
        model = tokens[5]
        if "=" in model or any("=" in n for n in nets):
            raise NetlistError(
                f"device {name}: MOS card needs 4 terminals and a model "
                "(dangling terminal)", lineno,
            )
        params = _split_params(tokens[6:], lineno)
        return Device(name, _device_kind(name, model), tuple(nets), params, model)
    if first in ("r", "c", "i", "v"):
        kind = _device_kind(name, None)
        rest = tokens[1:]
        if len(rest) >= 3 and rest[2].lower() == "dc" and kind in (
            DeviceKind.CURRENT_SOURCE, DeviceKind.VOLTAGE_SOURCE,
        ):
            rest = rest[:2] + rest[3:]
        if len(rest) < 3:
            raise NetlistError(
                f"device {name}: needs 2 terminals and a value (dangling terminal)",
                lineno,
            )
        nets = rest[:2]
        if any("=" in n for n in nets):
            raise NetlistError(
                f"device {name}: needs 2 terminals and a value (dangling terminal)",
                lineno,
            )
        try:
            value = parse_value(rest[2])
        except ValueError as exc:
            raise NetlistError(str(exc), lineno) from None
        if not value > 0:
            raise NetlistError(f"non-positive parameter {rest[2]!r}", lineno)
        params = {_VALUE_PARAM[kind]: value}
        params.update(_split_params(rest[3:], lineno))
        return Device(name, kind, tuple(nets), params)
    if first == "x":
        positional = [t for t in tokens[1:] if "=" not in t]
        kv = [t for t in tokens[1:] if "=" in t]
        if len(positional) < 2:
            raise NetlistError(
                f"device {name}: subcircuit instance needs terminals and a name",
                lineno,
            )
        *nets, subckt = positional
        return Device(
            name, DeviceKind.SUBCKT, tuple(nets), _split_params(kv, lineno), subckt
        )
    raise NetlistError(f"unrecognized card {name!r}", lineno)


def _logical_lines(text: str) -> Iterable[tuple[str, int]]:
    current: str | None = None
    current_no = 0
    for idx, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("+"):
            if current is None:
                raise NetlistError("continuation line without a preceding card", idx)
            current += " " + stripped[1:].strip()
            continue
        if current is not None:
            yield current, current_no
        current, current_no = stripped, idx
    if current is not None:
        yield current, current_no


def _strip_inline_comment(line: str) -> str:
    pos = line.find("$")
    return line if pos < 0 else line[:pos]


def parse_netlist(text: str) -> Netlist:
    """Parse netlist text into a Netlist, raising NetlistError with the
    offending line number on malformed input."""
    devices: list[Device] = []
    directives: list[str] = []
    title = ""
    ground: str | None = None
    seen: set[str] = set()

    for line, lineno in _logical_lines(text):
        line = _strip_inline_comment(line).strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("."):
            word, _, rest = line.partition(" ")
            word = word.lower()
            if word == ".title":
                title = rest.strip()
            elif word == ".ground":
                net = rest.strip()
                if not net or len(net.split()) != 1:
                    raise NetlistError(".ground needs exactly one net", lineno)
                ground = net
            elif word == ".end":
                continue
            else:
                directives.append(line)
            continue
        tokens = line.split()
        dev = _parse_card(tokens, lineno)
        if dev.name in seen:
            raise NetlistError(f"duplicate device name {dev.name}", lineno)
        seen.add(dev.name)
        devices.append(dev)

    if ground is None:
        ground = _infer_ground(devices)
    return Netlist(tuple(devices), title=title, ground=ground,
                   directives=tuple(directives))


def _infer_ground(devices: list[Device]) -> str:
    nets = {t for dev in devices for t in dev.terminals}
    if "0" in nets:
        return "0"
    for candidate in ("gnd", "vss"):
        for net in sorted(nets):
            if net.lower() == candidate:
                return net
    return "0"


def emit_netlist(netlist: Netlist) -> str:
    """Render a Netlist to canonical text: title and ground directives, then
    device cards in name order, then retained dot cards verbatim."""
    lines: list[str] = []
    if netlist.title:
        lines.append(f".title {netlist.title}")
    lines.append(f".ground {netlist.ground}")
    for dev in netlist.devices:
        lines.append(_emit_card(dev))
    lines.extend(netlist.directives)
    return "\n".join(lines) + "\n"


def _emit_card(dev: Device) -> str:
    parts = [dev.name, *dev.terminals]
    params = dict(dev.params)
    if dev.kind in _VALUE_PARAM:
        value_key = _VALUE_PARAM[dev.kind]
        parts.append(format_value(params.pop(value_key)))
    if dev.model is not None:
        parts.append(dev.model)
    for key in sorted(params):
        parts.append(f"{key}={format_value(params[key])}")
    return " ".join(parts)


def dangling_nets(netlist: Netlist) -> list[str]:
    """Nets touched by exactly one device terminal (excluding ground)."""
    counts: dict[str, int] = {}
    for dev in netlist.devices:
        for net in dev.terminals:
            counts[net] = counts.get(net, 0) + 1
    return sorted(n for n, c in counts.items() if c == 1 and n != netlist.ground)


def dump_device_graph(netlist: Netlist) -> str:
    """Line-oriented key:value dump of the device/net graph."""
    lines = [f"title: {netlist.title}", f"ground: {netlist.ground}"]
    for dev in netlist.devices:
        params = ",".join(f"{k}={format_value(v)}" for k, v in sorted(dev.params.items()))
        lines.append(
            f"device: {dev.name} kind: {dev.kind.value} "
            f"terminals: {','.join(dev.terminals)}"
            + (f" model: {dev.model}" if dev.model else "")
            + (f" params: {params}" if params else "")
        )
    degree: dict[str, int] = {}
    for dev in netlist.devices:
        for net in dev.terminals:
            degree[net] = degree.get(net, 0) + 1
    for net in sorted(netlist.nets):
        lines.append(f"net: {net} degree: {degree.get(net, 0)}")
    return "\n".join(lines) + "\n"
