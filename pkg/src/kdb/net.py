"""Canonical runtime representation of nets.

A canonical net is the net's parallel normal form: all restrictions are
extruded to a single outer prefix (renaming restricted localities apart when
extrusion would capture), every node is split into one item per co-located
process or table, and inert-process units are absorbed.  Rule matching in
the engine then becomes multiset lookup instead of congruence search.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

from kdb import syntax as s
from kdb.values import Multiset, sorted_rows


@dataclass(frozen=True)
class CanonicalNet:
    restricted: tuple  # locality names, outermost first
    items: Multiset  # of (loc, Process | TableComp)
    err: bool = False

    def localities(self) -> frozenset:
        return frozenset(loc for loc, _ in self.items.support())


def _is_table(body) -> bool:
    return isinstance(body, s.TableComp)


def _item_sort_key(pair):
    loc, body = pair
    return (loc, 0 if _is_table(body) else 1, s.render(body))


def sorted_items(cn: CanonicalNet) -> list:
    """Items repeated by multiplicity, in deterministic order."""
    out = []
    for pair, n in sorted(cn.items.items(), key=lambda kv: _item_sort_key(kv[0])):
        out.extend([pair] * n)
    return out


def _absorb_nil_units(items: list) -> list:
    """Drop inert processes at localities that host anything else."""
    locs_with_content = {loc for loc, body in items if not isinstance(body, s.NilProc)}
    out = []
    nil_only = {}
    for loc, body in items:
        if isinstance(body, s.NilProc):
            if loc not in locs_with_content:
                nil_only[loc] = (loc, body)
        else:
            out.append((loc, body))
    out.extend(nil_only.values())
    return out


def canonicalize(net: s.Net) -> CanonicalNet:
    """Normal form under structural congruence."""
    used = set(s.free_locs(net))
    counter = itertools.count(1)
    restricted: list = []
    items: list = []
    err = False

    def fresh(base: str) -> str:
        while True:
            cand = f"{base}#{next(counter)}"
            if cand not in used:
                return cand

    def split_component(loc: str, comp: s.Component):
        if isinstance(comp, s.ParComp):
            split_component(loc, comp.left)
            split_component(loc, comp.right)
        elif isinstance(comp, s.ProcComp):
            items.append((loc, comp.process))
        elif isinstance(comp, s.TableComp):
            items.append((loc, comp))
        else:
            raise TypeError(f"not a component: {comp!r}")

    def walk(n: s.Net, lenv: dict):
        nonlocal err
        if isinstance(n, s.NilNet):
            return
        if isinstance(n, s.ErrNet):
            err = True
            return
        if isinstance(n, s.ParNet):
            walk(n.left, lenv)
            walk(n.right, lenv)
            return
        if isinstance(n, s.Restrict):
            name = n.loc
            if name in used:
                name = fresh(name)
            used.add(name)
            restricted.append(name)
            walk(n.inner, {**lenv, n.loc: name})
            return
        if isinstance(n, s.Node):
            comp = s.rename_localities(n.component, lenv)
            split_component(lenv.get(n.loc, n.loc), comp)
            return
        raise TypeError(f"not a net: {n!r}")

    walk(net, {})
    return CanonicalNet(tuple(restricted), Multiset(_absorb_nil_units(items)), err)


def make_canonical(restricted: tuple, items, err: bool = False) -> CanonicalNet:
    """Build a canonical net from raw items, re-absorbing inert units."""
    return CanonicalNet(tuple(restricted), Multiset(_absorb_nil_units(list(items))), err)


ERR_NET = CanonicalNet((), Multiset(), True)


def to_net(cn: CanonicalNet) -> s.Net:
    """Expand back to a plain net term (restrictions outermost)."""
    if cn.err and not cn.items:
        return s.ErrNet()
    parts = []
    for loc, body in sorted_items(cn):
        comp = body if isinstance(body, s.TableComp) else s.ProcComp(body)
        parts.append(s.Node(loc, comp))
    if cn.err:
        parts.append(s.ErrNet())
    if not parts:
        net: s.Net = s.NilNet()
    else:
        net = parts[0]
        for p in parts[1:]:
            net = s.ParNet(net, p)
    for loc in reversed(cn.restricted):
        net = s.Restrict(loc, net)
    return net


# ---------------------------------------------------------------------------
# Table bookkeeping

def lid(n) -> Multiset:
    """The multiset of (locality, table identifier) pairs of all tables."""
    if isinstance(n, CanonicalNet):
        pairs = []
        for (loc, body), cnt in n.items.items():
            if _is_table(body):
                pairs.extend([(loc, body.interface.tid)] * cnt)
        return Multiset(pairs)
    if isinstance(n, (s.NilNet, s.ErrNet)):
        return Multiset()
    if isinstance(n, s.ParNet):
        return lid(n.left).union(lid(n.right))
    if isinstance(n, s.Restrict):
        return lid(n.inner)
    if isinstance(n, s.Node):
        return _lid_component(n.loc, n.component)
    raise TypeError(f"lid: not a net: {n!r}")


def _lid_component(loc: str, comp: s.Component) -> Multiset:
    if isinstance(comp, s.ProcComp):
        return Multiset()
    if isinstance(comp, s.TableComp):
        return Multiset([(loc, comp.interface.tid)])
    if isinstance(comp, s.ParComp):
        return _lid_component(loc, comp.left).union(_lid_component(loc, comp.right))
    raise TypeError(f"not a component: {comp!r}")


def no_rep(pairs: Multiset) -> bool:
    """True when no (locality, table identifier) pair repeats."""
    return all(n == 1 for _, n in pairs.items())


def find_tables(cn: CanonicalNet, loc: str, tid: str) -> list:
    """All tables named tid at loc, in deterministic order."""
    found = []
    for pair, cnt in cn.items.items():
        iloc, body = pair
        if iloc == loc and _is_table(body) and body.interface.tid == tid:
            found.extend([body] * cnt)
    found.sort(key=s.render)
    return found


def ok(cn: CanonicalNet) -> bool:
    return not cn.err


# ---------------------------------------------------------------------------
# Comparison keys and dumps

def canonical_key(cn: CanonicalNet):
    """A key identifying the net up to congruence and renaming of restrictions.

    Restricted names are anonymized positionally; with several restrictions
    the minimum over their permutations is taken (restriction prefixes are
    tiny in practice).
    """
    def keyed(mapping: dict):
        rows = []
        for (loc, body), cnt in cn.items.items():
            body2 = s.rename_localities(body, mapping)
            rows.append((mapping.get(loc, loc), s.render(body2), cnt))
        return tuple(sorted(rows))

    if not cn.restricted:
        return (cn.err, 0, keyed({}))
    best = None
    for perm in itertools.permutations(cn.restricted):
        mapping = {name: f"ρ{i}" for i, name in enumerate(perm)}
        cand = keyed(mapping)
        if best is None or cand < best:
            best = cand
    return (cn.err, len(cn.restricted), best)


def dump_tables(cn: CanonicalNet) -> list:
    """JSON-ready dump of every table, deterministic order."""
    out = []
    for loc, body in sorted_items(cn):
        if not _is_table(body):
            continue
        rows = [
            [_json_value(v) for v in row.components]
            for row in sorted_rows(body.rows)
        ]
        out.append({
            "loc": loc,
            "tid": body.interface.tid,
            "schema": s.render_schema(body.interface.schema),
            "rows": rows,
        })
    return out


def _json_value(v):
    from kdb.values import VInt, VLoc, VSet, VStr, VTid

    if isinstance(v, VInt):
        return v.value
    if isinstance(v, VStr):
        return v.value
    if isinstance(v, (VTid, VLoc)):
        return v.name
    if isinstance(v, VSet):
        return [_json_value(e) for e in sorted(v.elements, key=s.render_value)]
    raise TypeError(f"not a value: {v!r}")


def dump_json(cn: CanonicalNet) -> str:
    return json.dumps(dump_tables(cn), indent=2, sort_keys=False)
