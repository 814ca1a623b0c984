"""Structural motif detection on flat MOS netlists.

Two motifs are recognized:

* current mirror: maximal group of same-kind MOS devices sharing both gate
  net and source net, with exactly one diode-connected member (gate tied to
  its own drain) acting as the reference;
* differential pair: two same-kind MOS devices whose sources share a net fed
  by exactly one tail element (the drain of a third MOS or a terminal of a
  current source) and whose gates sit on different nets.  The shared net must
  carry nothing but the two sources and the tail connection, which keeps
  supply rails from producing fake pairs.

Detection is purely structural; annotations carry a human-readable evidence
string and can be serialized to relation-file text for seeding or for
inclusion in an agent prompt.
"""

from __future__ import annotations

from dataclasses import dataclass

from .netlist import Device, DeviceKind, Netlist


@dataclass(frozen=True)
class MotifAnnotation:
    """A detected motif: kind, (role, device) members, and evidence text."""

    kind: str  # "current-mirror" | "differential-pair"
    members: tuple[tuple[str, str], ...]
    evidence: str

    def devices_in_role(self, role: str) -> tuple[str, ...]:
        return tuple(dev for r, dev in self.members if r == role)


def detect_current_mirrors(netlist: Netlist) -> list[MotifAnnotation]:
    """Find mirror groups keyed by (kind, gate net, source net)."""
    groups: dict[tuple[DeviceKind, str, str], list[Device]] = {}
    for dev in netlist.devices:
        if dev.is_mos():
            groups.setdefault((dev.kind, dev.gate, dev.source), []).append(dev)

    found: list[MotifAnnotation] = []
    for (kind, gate, source), devs in sorted(
        groups.items(), key=lambda item: (item[0][0].value, item[0][1], item[0][2])
    ):
        if len(devs) < 2:
            continue
        diode = [d for d in devs if d.drain == d.gate]
        if len(diode) != 1:
            continue
        ref = diode[0]
        outputs = sorted((d.name for d in devs if d.name != ref.name))
        members = (("ref", ref.name),) + tuple(("out", name) for name in outputs)
        evidence = (
            f"{kind.value} devices {ref.name},{','.join(outputs)} share gate net "
            f"{gate} and source net {source}; {ref.name} is diode-connected"
        )
        found.append(MotifAnnotation("current-mirror", members, evidence))
    return found


def _source_net_profile(netlist: Netlist, net: str) -> list[tuple[str, str]]:
    """All (device, terminal role) connections on a net, ignoring MOS bulk."""
    touches: list[tuple[str, str]] = []
    for dev in netlist.devices:
        if dev.is_mos():
            roles = ("drain", "gate", "source")
        else:
            roles = tuple(f"t{i}" for i in range(len(dev.terminals)))
        for role, term in zip(roles, dev.terminals):
            if term == net:
                touches.append((dev.name, role))
    return touches


def detect_differential_pairs(netlist: Netlist) -> list[MotifAnnotation]:
    """Find source-coupled pairs with a dedicated tail element."""
    by_source: dict[tuple[DeviceKind, str], list[Device]] = {}
    for dev in netlist.devices:
        if dev.is_mos():
            by_source.setdefault((dev.kind, dev.source), []).append(dev)

    devmap = netlist.device_map()
    found: list[MotifAnnotation] = []
    for (kind, net), devs in sorted(
        by_source.items(), key=lambda item: (item[0][0].value, item[0][1])
    ):
        if len(devs) < 2 or net == netlist.ground:
            continue
        profile = _source_net_profile(netlist, net)
        if len(profile) != 3:
            continue
        sources = [name for name, role in profile if role == "source"]
        others = [(name, role) for name, role in profile if role != "source"]
        if len(sources) != 2 or len(others) != 1:
            continue
        tail_name, tail_role = others[0]
        tail_dev = devmap[tail_name]
        is_tail = (tail_dev.is_mos() and tail_role == "drain") or (
            tail_dev.kind is DeviceKind.CURRENT_SOURCE
        )
        if not is_tail:
            continue
        left, right = sorted(sources)
        if devmap[left].gate == devmap[right].gate:
            continue
        members = (("left", left), ("right", right), ("tail", tail_name))
        evidence = (
            f"{kind.value} devices {left},{right} share source net {net} fed only "
            f"by {tail_name}; gate nets {devmap[left].gate},{devmap[right].gate} differ"
        )
        found.append(MotifAnnotation("differential-pair", members, evidence))
    return found


def detect_motifs(netlist: Netlist) -> list[MotifAnnotation]:
    """All annotations, mirrors first, in deterministic order."""
    return detect_current_mirrors(netlist) + detect_differential_pairs(netlist)


def verify_annotation(netlist: Netlist, annot: MotifAnnotation) -> bool:
    """Re-check an annotation's structural predicate against the netlist."""
    if annot.kind == "current-mirror":
        return annot in detect_current_mirrors(netlist)
    if annot.kind == "differential-pair":
        return annot in detect_differential_pairs(netlist)
    return False


def motif_seed_relations(annotations: list[MotifAnnotation]):
    """Conservative equality relations implied by the motifs.

    Pairs match in W and L; mirror members share L.  Ratio guesses are left
    to the extraction layer.
    """
    from .relations import RelationKind, SizingRelation

    seeds = []
    for annot in annotations:
        if annot.kind == "differential-pair":
            pair = annot.devices_in_role("left") + annot.devices_in_role("right")
            for param in ("W", "L"):
                seeds.append(
                    SizingRelation(
                        devices=pair,
                        param=param,
                        kind=RelationKind.EQUAL,
                        coefficients=(1.0,) * len(pair),
                        provenance="topology",
                        rationale=annot.evidence,
                    )
                )
        elif annot.kind == "current-mirror":
            devs = annot.devices_in_role("ref") + annot.devices_in_role("out")
            seeds.append(
                SizingRelation(
                    devices=devs,
                    param="L",
                    kind=RelationKind.EQUAL,
                    coefficients=(1.0,) * len(devs),
                    provenance="topology",
                    rationale=annot.evidence,
                )
            )
    return seeds


def serialize_annotations(annotations: list[MotifAnnotation]) -> str:
    """Render annotations plus their seed relations in relation-file text."""
    from .relations import record_of

    lines: list[str] = []
    for annot in annotations:
        roles = " ".join(f"{role}={dev}" for role, dev in annot.members)
        lines.append(f"# motif {annot.kind} {roles}")
        lines.append(f"#   {annot.evidence}")
    for rel in motif_seed_relations(annotations):
        lines.append(record_of(rel))
    return "\n".join(lines) + "\n"
