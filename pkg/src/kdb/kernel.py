"""Pure semantic kernel: evaluation, matching, substitution, joins.

All operations are total functions that report failures through the ERR
sentinel rather than exceptions; the transition engine turns ERR outcomes
into monitored error states.
"""

from __future__ import annotations

import itertools
from typing import Optional, Union

from kdb import syntax as s
from kdb.values import (
    Multiset,
    Value,
    ValueTuple,
    VInt,
    VLoc,
    VSet,
    VStr,
    VTid,
    row_sort_key,
    scalar_kind,
    value_sort_key,
)


class _EvalErr:
    """Singleton marker for evaluation and matching failures."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ERR"

    def __bool__(self):
        return False


ERR = _EvalErr()


def is_err(x) -> bool:
    return x is ERR


# A substitution binds variable names to values, or table variables to
# literal tables produced by selection.
Subst = dict


# ---------------------------------------------------------------------------
# Evaluation

def eval_expr(e: s.Expr) -> Union[Value, _EvalErr]:
    if isinstance(e, s.IntLit):
        return VInt(e.value)
    if isinstance(e, s.StrLit):
        return VStr(e.value)
    if isinstance(e, s.TidLit):
        return VTid(e.name)
    if isinstance(e, s.LocLit):
        return VLoc(e.name)
    if isinstance(e, (s.DataVar, s.LocVar)):
        # Closed expressions only; a leftover variable is an evaluation error.
        return ERR
    if isinstance(e, s.Concat):
        a = eval_expr(e.left)
        b = eval_expr(e.right)
        if isinstance(a, VStr) and isinstance(b, VStr):
            return VStr(a.value + b.value)
        return ERR
    if isinstance(e, s.Arith):
        a = eval_expr(e.left)
        b = eval_expr(e.right)
        if not (isinstance(a, VInt) and isinstance(b, VInt)):
            return ERR
        if e.op == "+":
            return VInt(a.value + b.value)
        if e.op == "-":
            return VInt(a.value - b.value)
        if e.op == "*":
            return VInt(a.value * b.value)
        if e.op == "/":
            if b.value == 0:
                return VInt(0)
            q = abs(a.value) // abs(b.value)
            return VInt(q if (a.value >= 0) == (b.value >= 0) else -q)
        raise ValueError(f"unknown arithmetic operator {e.op!r}")
    if isinstance(e, s.MultisetLit):
        vals = []
        for el in e.elements:
            v = eval_expr(el)
            if is_err(v):
                return ERR
            k = scalar_kind(v)
            if k is None:
                return ERR
            vals.append(v)
        if vals and len({scalar_kind(v) for v in vals}) != 1:
            return ERR
        return VSet(Multiset(vals))
    raise TypeError(f"not an expression: {e!r}")


def _cmp_scalars(op: str, a: Value, b: Value):
    ka, kb = scalar_kind(a), scalar_kind(b)
    if ka is None or kb is None or ka != kb:
        return ERR
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op in s.ORDERED_CMP_OPS:
        # Ordering exists for integers (numeric) and strings (lexicographic).
        if ka == "Int":
            x, y = a.value, b.value
        elif ka == "String":
            x, y = a.value, b.value
        else:
            return ERR
        if op == "<":
            return x < y
        if op == "<=":
            return x <= y
        if op == ">":
            return x > y
        return x >= y
    return ERR


def _proper_subset(a: VSet, b: VSet) -> Union[bool, _EvalErr]:
    ka, kb = a.kind(), b.kind()
    if ka is not None and kb is not None and ka != kb:
        return ERR
    for elem, n in a.elements.items():
        if b.elements.count(elem) < n:
            return False
    return a.elements != b.elements


def eval_pred(p: s.Pred) -> Union[bool, _EvalErr]:
    if isinstance(p, s.TruePred):
        return True
    if isinstance(p, s.Cmp):
        a = eval_expr(p.left)
        b = eval_expr(p.right)
        if is_err(a) or is_err(b):
            return ERR
        if p.op == "sub":
            if isinstance(a, VSet) and isinstance(b, VSet):
                return _proper_subset(a, b)
            return ERR
        return _cmp_scalars(p.op, a, b)
    if isinstance(p, s.Member):
        a = eval_expr(p.elem)
        b = eval_expr(p.container)
        if is_err(a) or is_err(b):
            return ERR
        if scalar_kind(a) is None or not isinstance(b, VSet):
            return ERR
        bk = b.kind()
        if bk is not None and bk != scalar_kind(a):
            return ERR
        return a in b.elements
    if isinstance(p, s.Not):
        r = eval_pred(p.inner)
        if is_err(r):
            return ERR
        return not r
    if isinstance(p, s.And):
        # Error-strict: an error on either side wins even if the other is false.
        a = eval_pred(p.left)
        b = eval_pred(p.right)
        if is_err(a) or is_err(b):
            return ERR
        return a and b
    raise TypeError(f"not a predicate: {p!r}")


def eval_tuple(t: s.Tuple) -> Union[ValueTuple, _EvalErr]:
    vals = []
    for e in t.components:
        v = eval_expr(e)
        if is_err(v):
            return ERR
        vals.append(v)
    return ValueTuple(tuple(vals))


# ---------------------------------------------------------------------------
# Pattern matching

def match(et: ValueTuple, template: s.Template) -> Union[Subst, _EvalErr]:
    """Match an evaluated row against a template, producing a substitution."""
    if len(et) != len(template.fields):
        return ERR
    out: Subst = {}
    for v, f in zip(et.components, template.fields):
        if isinstance(f, s.BindData):
            # Localities only bind locality fields; everything else binds data.
            if isinstance(v, VLoc):
                return ERR
            out[f.name] = v
        else:
            if not isinstance(v, VLoc):
                return ERR
            out[f.name] = v
    return out


# ---------------------------------------------------------------------------
# Well-sortedness

def well_sorted_value(v, sort) -> bool:
    """Check a value against an MType, or a row against a schema."""
    if isinstance(sort, tuple):
        if not isinstance(v, ValueTuple) or len(v) != len(sort):
            return False
        return all(well_sorted_value(c, t) for c, t in zip(v.components, sort))
    if isinstance(sort, s.Base):
        want = {"Int": VInt, "String": VStr, "Id": VTid, "Loc": VLoc}[sort.kind]
        return isinstance(v, want)
    if isinstance(sort, s.MSet):
        if not isinstance(v, VSet):
            return False
        k = v.kind()
        return k is None or k == sort.kind
    raise TypeError(f"not a sort: {sort!r}")


def well_sorted_field(f, sort) -> bool:
    if isinstance(f, s.BindData):
        return not (isinstance(sort, s.Base) and sort.kind == "Loc")
    if isinstance(f, s.BindLoc):
        return isinstance(sort, s.Base) and sort.kind == "Loc"
    raise TypeError(f"not a template field: {f!r}")


def well_sorted_template(template: s.Template, sk: s.Schema) -> bool:
    if len(template.fields) != len(sk):
        return False
    return all(well_sorted_field(f, t) for f, t in zip(template.fields, sk))


# ---------------------------------------------------------------------------
# Substitution

def value_to_expr(v: Value) -> s.Expr:
    if isinstance(v, VInt):
        return s.IntLit(v.value)
    if isinstance(v, VStr):
        return s.StrLit(v.value)
    if isinstance(v, VTid):
        return s.TidLit(v.name)
    if isinstance(v, VLoc):
        return s.LocLit(v.name)
    if isinstance(v, VSet):
        elems = sorted(v.elements, key=value_sort_key)
        return s.MultisetLit(tuple(value_to_expr(e) for e in elems))
    raise TypeError(f"not a value: {v!r}")


def _without(sigma: Subst, names) -> Subst:
    trimmed = {n: v for n, v in sigma.items() if n not in names}
    return trimmed if len(trimmed) != len(sigma) else sigma


def _subst_expr(sigma: Subst, e: s.Expr) -> s.Expr:
    if isinstance(e, (s.DataVar, s.LocVar)):
        if e.name in sigma:
            v = sigma[e.name]
            if isinstance(v, s.TableLiteral):
                raise TypeError(f"table bound to {e.name!r} used as an expression")
            return value_to_expr(v)
        return e
    if isinstance(e, s.Concat):
        return s.Concat(_subst_expr(sigma, e.left), _subst_expr(sigma, e.right))
    if isinstance(e, s.Arith):
        return s.Arith(e.op, _subst_expr(sigma, e.left), _subst_expr(sigma, e.right))
    if isinstance(e, s.MultisetLit):
        return s.MultisetLit(tuple(_subst_expr(sigma, x) for x in e.elements))
    return e


def _subst_pred(sigma: Subst, p: s.Pred) -> s.Pred:
    if isinstance(p, s.TruePred):
        return p
    if isinstance(p, s.Cmp):
        return s.Cmp(p.op, _subst_expr(sigma, p.left), _subst_expr(sigma, p.right))
    if isinstance(p, s.Member):
        return s.Member(_subst_expr(sigma, p.elem), _subst_expr(sigma, p.container))
    if isinstance(p, s.Not):
        return s.Not(_subst_pred(sigma, p.inner))
    if isinstance(p, s.And):
        return s.And(_subst_pred(sigma, p.left), _subst_pred(sigma, p.right))
    raise TypeError(f"not a predicate: {p!r}")


def _subst_tuple(sigma: Subst, t: s.Tuple) -> s.Tuple:
    return s.Tuple(tuple(_subst_expr(sigma, e) for e in t.components))


def _subst_tableref(sigma: Subst, tb: s.TableRef) -> s.TableRef:
    if isinstance(tb, s.TableByName):
        return s.TableByName(tb.tid, _subst_expr(sigma, tb.loc))
    if isinstance(tb, s.TableByVar):
        if tb.name in sigma:
            v = sigma[tb.name]
            if not isinstance(v, s.TableLiteral):
                raise TypeError(f"non-table bound to table variable {tb.name!r}")
            return v
        return tb
    return tb


def _subst_action(sigma: Subst, a: s.Action) -> s.Action:
    if isinstance(a, s.Insert):
        return s.Insert(a.tid, _subst_tuple(sigma, a.payload), _subst_expr(sigma, a.loc))
    if isinstance(a, s.Delete):
        inner = _without(sigma, a.template.names())
        return s.Delete(a.tid, a.template, _subst_pred(inner, a.pred),
                        _subst_expr(sigma, a.loc))
    if isinstance(a, s.Select):
        inner = _without(sigma, a.template.names())
        return s.Select(
            tuple(_subst_tableref(sigma, tb) for tb in a.tables),
            a.template,
            _subst_pred(inner, a.pred),
            _subst_tuple(inner, a.payload),
            a.bind,
        )
    if isinstance(a, s.Update):
        inner = _without(sigma, a.template.names())
        return s.Update(a.tid, a.template, _subst_pred(inner, a.pred),
                        _subst_tuple(inner, a.payload), _subst_expr(sigma, a.loc))
    if isinstance(a, s.Aggr):
        inner = _without(sigma, a.template.names())
        return s.Aggr(a.tid, a.template, _subst_pred(inner, a.pred), a.fn,
                      a.bind_template, _subst_expr(sigma, a.loc))
    if isinstance(a, s.Create):
        return s.Create(a.tid, _subst_expr(sigma, a.loc), a.schema)
    if isinstance(a, s.Drop):
        return s.Drop(a.tid, _subst_expr(sigma, a.loc))
    if isinstance(a, s.Eval):
        return s.Eval(_subst_process(sigma, a.process), _subst_expr(sigma, a.loc))
    raise TypeError(f"not an action: {a!r}")


def _subst_process(sigma: Subst, p: s.Process) -> s.Process:
    if not sigma:
        return p
    if isinstance(p, s.NilProc):
        return p
    if isinstance(p, s.Prefix):
        new_action = _subst_action(sigma, p.action)
        cont_sigma = _without(sigma, s._binders_exported(p.action))
        return s.Prefix(new_action, _subst_process(cont_sigma, p.cont))
    if isinstance(p, s.CallProc):
        return s.CallProc(p.name, tuple(_subst_expr(sigma, e) for e in p.args))
    if isinstance(p, s.Foreach):
        inner = _without(sigma, p.template.names())
        return s.Foreach(
            _subst_tableref(sigma, p.table),
            p.template,
            _subst_pred(inner, p.pred),
            p.order,
            _subst_process(inner, p.body),
        )
    if isinstance(p, s.Seq):
        return s.Seq(_subst_process(sigma, p.first), _subst_process(sigma, p.second))
    raise TypeError(f"not a process: {p!r}")


def apply_subst(sigma: Subst, target):
    """Apply a substitution, respecting binders that shadow its domain."""
    if not sigma:
        return target
    if isinstance(target, s.Tuple):
        return _subst_tuple(sigma, target)
    if isinstance(target, (s.TruePred, s.Cmp, s.Member, s.Not, s.And)):
        return _subst_pred(sigma, target)
    if isinstance(target, (s.NilProc, s.Prefix, s.CallProc, s.Foreach, s.Seq)):
        return _subst_process(sigma, target)
    if isinstance(target, (s.TableByName, s.TableByVar, s.TableLiteral)):
        return _subst_tableref(sigma, target)
    return _subst_expr(sigma, target)


# ---------------------------------------------------------------------------
# Schema projection

def _const_sort(e: s.Expr) -> Optional[s.MType]:
    if isinstance(e, s.IntLit):
        return s.INT
    if isinstance(e, s.StrLit):
        return s.STRING
    if isinstance(e, s.TidLit):
        return s.ID
    if isinstance(e, s.LocLit):
        return s.LOC
    if isinstance(e, s.MultisetLit):
        kinds = set()
        for el in e.elements:
            t = _const_sort(el)
            if not isinstance(t, s.Base):
                return None
            kinds.add(t.kind)
        if len(kinds) != 1:
            return None
        return s.MSet(kinds.pop())
    return None


def project_schema(sk: s.Schema, template: s.Template, t: s.Tuple) -> Optional[s.Schema]:
    """Restrict a schema to the columns a payload tuple draws from.

    Each payload component is either a constant (contributing its own sort)
    or a variable bound by the template (contributing the bound column's
    sort).  Returns None when the projection is undefined.
    """
    if len(template.fields) != len(sk):
        return None
    if len(t.components) > len(template.fields):
        return None
    by_name = {f.name: i for i, f in enumerate(template.fields)}
    out = []
    for e in t.components:
        if isinstance(e, (s.DataVar, s.LocVar)):
            i = by_name.get(e.name)
            if i is None:
                return None
            out.append(sk[i])
        else:
            ts = _const_sort(e)
            if ts is None:
                return None
            out.append(ts)
    return tuple(out)


# ---------------------------------------------------------------------------
# Joins

def _resolve_ref(ref: s.TableRef, located):
    """Resolve one table reference against located tables; None if impossible."""
    if isinstance(ref, s.TableLiteral):
        return ref.interface, ref.rows
    if isinstance(ref, s.TableByName):
        if not isinstance(ref.loc, s.LocLit):
            return None
        for loc, interface, rows in located:
            if loc == ref.loc.name and interface.tid == ref.tid:
                return interface, rows
        return None
    return None


def join_schemas(refs, located) -> Optional[s.Schema]:
    """Flattened product of the schemas of the referenced tables."""
    out = []
    for ref in refs:
        r = _resolve_ref(ref, located)
        if r is None:
            return None
        out.extend(r[0].schema)
    return tuple(out)


def join_rows(refs, located) -> Optional[Multiset]:
    """Flattened Cartesian product of row multisets, multiplicities multiplying."""
    tables = []
    for ref in refs:
        r = _resolve_ref(ref, located)
        if r is None:
            return None
        tables.append(r[1])
    counts: dict = {}
    for combo in itertools.product(*(t.items() for t in tables)):
        parts = []
        mult = 1
        for row, n in combo:
            parts.extend(row.components)
            mult *= n
        key = ValueTuple(tuple(parts))
        counts[key] = counts.get(key, 0) + mult
    return Multiset(counts)


# ---------------------------------------------------------------------------
# Loop orders and aggregation

def _precedes(order: s.OrderSpec, a: ValueTuple, b: ValueTuple) -> bool:
    """The reflexive partial order used to pick loop candidates."""
    if a == b:
        return True
    if isinstance(order, s.Unordered):
        return False
    if isinstance(order, s.Asc):
        i = order.col - 1
        return value_sort_key(a[i]) < value_sort_key(b[i])
    if isinstance(order, s.Desc):
        i = order.col - 1
        return value_sort_key(a[i]) > value_sort_key(b[i])
    if isinstance(order, s.Lex):
        return row_sort_key(a) < row_sort_key(b)
    raise TypeError(f"not an order: {order!r}")


def minimal(rows: Multiset, order: s.OrderSpec) -> frozenset:
    """Rows with no strictly preceding row; the support set when unordered."""
    support = rows.support()
    return frozenset(
        t for t in support
        if all(u == t or not _precedes(order, u, t) for u in support)
    )


def aggr_row_ok(fn: s.AggrFn, row: ValueTuple) -> bool:
    """Whether a row fits the aggregator's input column requirements."""
    if isinstance(fn, s.AggCount):
        return True
    i = fn.col - 1
    return 0 <= i < len(row) and isinstance(row[i], VInt)


def aggr_bind_ok(fn: s.AggrFn, bind_template: s.Template) -> bool:
    """All aggregators yield a single integer, so the binder must be one !x."""
    return len(bind_template.fields) == 1 and isinstance(bind_template.fields[0], s.BindData)


def apply_aggr(fn: s.AggrFn, rows: Multiset) -> ValueTuple:
    """Aggregate a multiset of rows into a unary result tuple.

    Multiplicities count: a row occurring twice contributes twice to sums
    and counts.  Every aggregator returns 0 on the empty multiset, and the
    average is the floor of the integer division.
    """
    if isinstance(fn, s.AggCount):
        return ValueTuple((VInt(len(rows)),))
    i = fn.col - 1
    if isinstance(fn, s.AggSum):
        total = sum(row[i].value * n for row, n in rows.items())
        return ValueTuple((VInt(total),))
    if isinstance(fn, s.AggAvg):
        size = len(rows)
        if size == 0:
            return ValueTuple((VInt(0),))
        total = sum(row[i].value * n for row, n in rows.items())
        return ValueTuple((VInt(total // size),))
    vals = [row[i].value for row in rows.support()]
    if not vals:
        return ValueTuple((VInt(0),))
    return ValueTuple((VInt(min(vals) if isinstance(fn, s.AggMin) else max(vals)),))
