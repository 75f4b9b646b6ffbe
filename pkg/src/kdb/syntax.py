"""Abstract syntax of the coordination language.

AST nodes are frozen dataclasses with tuple-valued children, so every node is
hashable and structural equality is cheap.  Source spans are carried on nodes
but excluded from equality and hashing: two parses of the same text compare
equal regardless of layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Union

from kdb.values import (
    Multiset,
    ValueTuple,
    VInt,
    VLoc,
    VSet,
    VStr,
    VTid,
    sorted_rows,
)


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


def span_field():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Types (column sorts and schemas)

@dataclass(frozen=True)
class Base:
    kind: str  # "Int" | "String" | "Id" | "Loc"


@dataclass(frozen=True)
class MSet:
    kind: str


MType = Union[Base, MSet]
Schema = tuple  # tuple of MType, length >= 1

INT = Base("Int")
STRING = Base("String")
ID = Base("Id")
LOC = Base("Loc")


# ---------------------------------------------------------------------------
# Expressions

@dataclass(frozen=True)
class IntLit:
    value: int
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class StrLit:
    value: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class TidLit:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class LocLit:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class DataVar:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class LocVar:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Concat:
    left: "Expr"
    right: "Expr"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Arith:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class MultisetLit:
    elements: tuple  # of Expr, each multiset-free
    span: Optional[Span] = span_field()


Expr = Union[IntLit, StrLit, TidLit, LocLit, DataVar, LocVar, Concat, Arith, MultisetLit]


# ---------------------------------------------------------------------------
# Predicates

@dataclass(frozen=True)
class TruePred:
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Cmp:
    op: str  # = != < <= > >= sub
    left: Expr
    right: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Member:
    elem: Expr
    container: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Not:
    inner: "Pred"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class And:
    left: "Pred"
    right: "Pred"
    span: Optional[Span] = span_field()


Pred = Union[TruePred, Cmp, Member, Not, And]

ORDERED_CMP_OPS = ("<", "<=", ">", ">=")
CMP_OPS = ("=", "!=") + ORDERED_CMP_OPS + ("sub",)


# ---------------------------------------------------------------------------
# Tuples and templates

@dataclass(frozen=True)
class Tuple:
    components: tuple  # of Expr, length >= 1
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class BindData:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class BindLoc:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Template:
    fields: tuple  # of BindData | BindLoc, length >= 1
    span: Optional[Span] = span_field()

    def names(self) -> tuple:
        return tuple(f.name for f in self.fields)


# ---------------------------------------------------------------------------
# Tables

@dataclass(frozen=True)
class Interface:
    tid: Optional[str]  # None marks the anonymous interface of selection results
    schema: Schema


@dataclass(frozen=True)
class TableByName:
    tid: str
    loc: Expr  # LocLit or LocVar
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class TableByVar:
    name: str
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class TableLiteral:
    interface: Interface
    rows: Multiset  # of ValueTuple
    span: Optional[Span] = span_field()


TableRef = Union[TableByName, TableByVar, TableLiteral]


# ---------------------------------------------------------------------------
# Aggregators and loop orders

@dataclass(frozen=True)
class AggSum:
    col: int


@dataclass(frozen=True)
class AggAvg:
    col: int


@dataclass(frozen=True)
class AggCount:
    pass


@dataclass(frozen=True)
class AggMin:
    col: int


@dataclass(frozen=True)
class AggMax:
    col: int


AggrFn = Union[AggSum, AggAvg, AggCount, AggMin, AggMax]


@dataclass(frozen=True)
class Unordered:
    pass


@dataclass(frozen=True)
class Asc:
    col: int


@dataclass(frozen=True)
class Desc:
    col: int


@dataclass(frozen=True)
class Lex:
    pass


OrderSpec = Union[Unordered, Asc, Desc, Lex]


# ---------------------------------------------------------------------------
# Actions

@dataclass(frozen=True)
class Insert:
    tid: str
    payload: Tuple
    loc: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Delete:
    tid: str
    template: Template
    pred: Pred
    loc: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Select:
    tables: tuple  # of TableRef, length >= 1
    template: Template
    pred: Pred
    payload: Tuple
    bind: str  # table variable bound in the continuation
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Update:
    tid: str
    template: Template
    pred: Pred
    payload: Tuple
    loc: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Aggr:
    tid: str
    template: Template
    pred: Pred
    fn: AggrFn
    bind_template: Template
    loc: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Create:
    tid: str
    loc: Expr
    schema: Schema
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Drop:
    tid: str
    loc: Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Eval:
    process: "Process"
    loc: Expr
    span: Optional[Span] = span_field()


Action = Union[Insert, Delete, Select, Update, Aggr, Create, Drop, Eval]


# ---------------------------------------------------------------------------
# Processes

@dataclass(frozen=True)
class NilProc:
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Prefix:
    action: Action
    cont: "Process"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class CallProc:
    name: str
    args: tuple  # of Expr
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Foreach:
    table: TableRef
    template: Template
    pred: Pred
    order: OrderSpec
    body: "Process"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Seq:
    first: "Process"
    second: "Process"
    span: Optional[Span] = span_field()


Process = Union[NilProc, Prefix, CallProc, Foreach, Seq]


# ---------------------------------------------------------------------------
# Components and nets

@dataclass(frozen=True)
class ProcComp:
    process: Process
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class TableComp:
    interface: Interface
    rows: Multiset  # of ValueTuple
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class ParComp:
    left: "Component"
    right: "Component"
    span: Optional[Span] = span_field()


Component = Union[ProcComp, TableComp, ParComp]


@dataclass(frozen=True)
class NilNet:
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class ErrNet:
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class ParNet:
    left: "Net"
    right: "Net"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Restrict:
    loc: str
    inner: "Net"
    span: Optional[Span] = span_field()


@dataclass(frozen=True)
class Node:
    loc: str
    component: Component
    span: Optional[Span] = span_field()


Net = Union[NilNet, ErrNet, ParNet, Restrict, Node]


@dataclass(frozen=True)
class ProcDef:
    name: str
    params: tuple  # of (name, MType | Schema); Base("Loc") marks a locality parameter
    body: Process
    span: Optional[Span] = span_field()


@dataclass
class System:
    procedures: dict  # name -> ProcDef, in declaration order
    schema_decls: tuple  # of (tid, Schema), in declaration order; repeats kept
    main_net: Net

    def schema_map(self) -> dict:
        """First declaration wins; conflicts are the type checker's business."""
        out = {}
        for tid, sk in self.schema_decls:
            out.setdefault(tid, sk)
        return out

    def __eq__(self, other):
        if not isinstance(other, System):
            return NotImplemented
        return (
            self.procedures == other.procedures
            and self.schema_decls == other.schema_decls
            and self.main_net == other.main_net
        )


# ---------------------------------------------------------------------------
# Rendering back to concrete syntax

def render_mtype(t: MType) -> str:
    if isinstance(t, Base):
        return t.kind
    return "{" + t.kind + "}"


def render_schema(sk: Schema) -> str:
    return "(" + ", ".join(render_mtype(t) for t in sk) + ")"


def render_value(v) -> str:
    if isinstance(v, VInt):
        return str(v.value)
    if isinstance(v, VStr):
        return _quote(v.value)
    if isinstance(v, VTid):
        return v.name
    if isinstance(v, VLoc):
        return "$" + v.name
    if isinstance(v, VSet):
        inner = sorted(v.elements, key=lambda e: render_value(e))
        return "{" + ", ".join(render_value(e) for e in inner) + "}"
    raise TypeError(f"not a value: {v!r}")


def render_row(row: ValueTuple) -> str:
    return "(" + ", ".join(render_value(v) for v in row.components) + ")"


def render_rows(rows: Multiset) -> str:
    return "{" + ", ".join(render_row(r) for r in sorted_rows(rows)) + "}"


def _quote(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"')
    out = out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
    return '"' + out + '"'


def _render_expr(e: Expr) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, StrLit):
        return _quote(e.value)
    if isinstance(e, TidLit):
        return e.name
    if isinstance(e, LocLit):
        return "$" + e.name
    if isinstance(e, (DataVar, LocVar)):
        return e.name
    if isinstance(e, Concat):
        return f"({_render_expr(e.left)} ++ {_render_expr(e.right)})"
    if isinstance(e, Arith):
        return f"({_render_expr(e.left)} {e.op} {_render_expr(e.right)})"
    if isinstance(e, MultisetLit):
        return "{" + ", ".join(_render_expr(x) for x in e.elements) + "}"
    raise TypeError(f"not an expression: {e!r}")


def _pred_atom(p: Pred) -> str:
    # Anything that is not already an atom gets explicit parentheses.
    if isinstance(p, TruePred):
        return "true"
    if isinstance(p, Not):
        return _render_pred(p)
    return "(" + _render_pred(p) + ")"


def _render_pred(p: Pred) -> str:
    if isinstance(p, TruePred):
        return "true"
    if isinstance(p, Cmp):
        return f"{_render_expr(p.left)} {p.op} {_render_expr(p.right)}"
    if isinstance(p, Member):
        return f"{_render_expr(p.elem)} in {_render_expr(p.container)}"
    if isinstance(p, Not):
        return "!" + _pred_atom(p.inner)
    if isinstance(p, And):
        return f"{_pred_atom(p.left)} && {_pred_atom(p.right)}"
    raise TypeError(f"not a predicate: {p!r}")


def _render_tuple(t: Tuple) -> str:
    return "(" + ", ".join(_render_expr(e) for e in t.components) + ")"


def _render_template(t: Template) -> str:
    parts = []
    for f in t.fields:
        parts.append(("!" if isinstance(f, BindData) else "!@") + f.name)
    return "(" + ", ".join(parts) + ")"


def _render_tableref(tb: TableRef) -> str:
    if isinstance(tb, TableByName):
        return f"{tb.tid}@{_render_expr(tb.loc)}"
    if isinstance(tb, TableByVar):
        return tb.name
    if isinstance(tb, TableLiteral):
        return _render_table(tb.interface, tb.rows)
    raise TypeError(f"not a table reference: {tb!r}")


def _render_table(interface: Interface, rows: Multiset) -> str:
    tid = interface.tid if interface.tid is not None else "?"
    return f"table {tid} : {render_schema(interface.schema)} = {render_rows(rows)}"


def _render_aggfn(f: AggrFn) -> str:
    if isinstance(f, AggSum):
        return f"sum[{f.col}]"
    if isinstance(f, AggAvg):
        return f"avg[{f.col}]"
    if isinstance(f, AggCount):
        return "count"
    if isinstance(f, AggMin):
        return f"min[{f.col}]"
    if isinstance(f, AggMax):
        return f"max[{f.col}]"
    raise TypeError(f"not an aggregator: {f!r}")


def _render_order(o: OrderSpec) -> str:
    if isinstance(o, Unordered):
        return "unordered"
    if isinstance(o, Asc):
        return f"asc[{o.col}]"
    if isinstance(o, Desc):
        return f"desc[{o.col}]"
    if isinstance(o, Lex):
        return "lex"
    raise TypeError(f"not an order: {o!r}")


def _render_action(a: Action) -> str:
    if isinstance(a, Insert):
        return f"insert({a.tid}@{_render_expr(a.loc)}, {_render_tuple(a.payload)})"
    if isinstance(a, Delete):
        return (
            f"delete({a.tid}@{_render_expr(a.loc)}, "
            f"{_render_template(a.template)}, {_render_pred(a.pred)})"
        )
    if isinstance(a, Select):
        tables = ", ".join(_render_tableref(tb) for tb in a.tables)
        return (
            f"select({tables}, {_render_template(a.template)}, "
            f"{_render_pred(a.pred)}, {_render_tuple(a.payload)}, !{a.bind})"
        )
    if isinstance(a, Update):
        return (
            f"update({a.tid}@{_render_expr(a.loc)}, {_render_template(a.template)}, "
            f"{_render_pred(a.pred)}, {_render_tuple(a.payload)})"
        )
    if isinstance(a, Aggr):
        return (
            f"aggr({a.tid}@{_render_expr(a.loc)}, {_render_template(a.template)}, "
            f"{_render_pred(a.pred)}, {_render_aggfn(a.fn)}, "
            f"{_render_template(a.bind_template)})"
        )
    if isinstance(a, Create):
        return f"create({a.tid}@{_render_expr(a.loc)}, {render_schema(a.schema)})"
    if isinstance(a, Drop):
        return f"drop({a.tid}@{_render_expr(a.loc)})"
    if isinstance(a, Eval):
        return f"eval({_render_process(a.process)}, {_render_expr(a.loc)})"
    raise TypeError(f"not an action: {a!r}")


def _proc_atom(p: Process) -> str:
    # Sequencing binds loosest, so it needs parentheses in tight positions.
    if isinstance(p, Seq):
        return "(" + _render_process(p) + ")"
    return _render_process(p)


def _render_process(p: Process) -> str:
    if isinstance(p, NilProc):
        return "nil"
    if isinstance(p, Prefix):
        return f"{_render_action(p.action)}. {_proc_atom(p.cont)}"
    if isinstance(p, CallProc):
        return f"{p.name}(" + ", ".join(_render_expr(e) for e in p.args) + ")"
    if isinstance(p, Foreach):
        return (
            f"foreach({_render_tableref(p.table)}, {_render_template(p.template)}, "
            f"{_render_pred(p.pred)}, {_render_order(p.order)}): {_proc_atom(p.body)}"
        )
    if isinstance(p, Seq):
        return f"{_proc_atom(p.first)}; {_render_process(p.second)}"
    raise TypeError(f"not a process: {p!r}")


def _comp_atom(c: Component) -> str:
    if isinstance(c, ParComp):
        return "{ " + _render_component(c) + " }"
    return _render_component(c)


def _render_component(c: Component) -> str:
    if isinstance(c, ProcComp):
        return _render_process(c.process)
    if isinstance(c, TableComp):
        return _render_table(c.interface, c.rows)
    if isinstance(c, ParComp):
        return f"{_comp_atom(c.left)} | {_comp_atom(c.right)}"
    raise TypeError(f"not a component: {c!r}")


def _net_atom(n: Net) -> str:
    if isinstance(n, ParNet):
        return "(" + _render_net(n) + ")"
    return _render_net(n)


def _render_net(n: Net) -> str:
    if isinstance(n, NilNet):
        return "nil"
    if isinstance(n, ErrNet):
        return "ERR"
    if isinstance(n, Node):
        return f"${n.loc} :: {_render_component(n.component)}"
    if isinstance(n, ParNet):
        return f"{_net_atom(n.left)} || {_net_atom(n.right)}"
    if isinstance(n, Restrict):
        return f"(new ${n.loc}) {_net_atom(n.inner)}"
    raise TypeError(f"not a net: {n!r}")


def _render_param(name: str, ty) -> str:
    if isinstance(ty, tuple):
        return f"{name}: {render_schema(ty)}"
    return f"{name}: {render_mtype(ty)}"


def _render_system(s: System) -> str:
    lines = []
    for tid, sk in s.schema_decls:
        lines.append(f"schema {tid} : {render_schema(sk)}")
    defs = list(s.procedures.values())
    if defs:
        for i, d in enumerate(defs):
            kw = "let" if i == 0 else "and"
            params = ", ".join(_render_param(n, t) for n, t in d.params)
            lines.append(f"{kw} {d.name}({params}) := {_render_process(d.body)}")
        lines.append("in")
    lines.append(_render_net(s.main_net))
    return "\n".join(lines)


_RENDERERS = (
    ((IntLit, StrLit, TidLit, LocLit, DataVar, LocVar, Concat, Arith, MultisetLit), _render_expr),
    ((TruePred, Cmp, Member, Not, And), _render_pred),
    ((Tuple,), _render_tuple),
    ((Template,), _render_template),
    ((TableByName, TableByVar, TableLiteral), _render_tableref),
    ((AggSum, AggAvg, AggCount, AggMin, AggMax), _render_aggfn),
    ((Unordered, Asc, Desc, Lex), _render_order),
    ((Insert, Delete, Select, Update, Aggr, Create, Drop, Eval), _render_action),
    ((NilProc, Prefix, CallProc, Foreach, Seq), _render_process),
    ((ProcComp, TableComp, ParComp), _render_component),
    ((NilNet, ErrNet, ParNet, Restrict, Node), _render_net),
    ((System,), _render_system),
)


def render(node) -> str:
    """Render any AST node back to concrete syntax."""
    for classes, fn in _RENDERERS:
        if isinstance(node, classes):
            return fn(node)
    raise TypeError(f"cannot render {type(node).__name__}")


# ---------------------------------------------------------------------------
# Binding structure

def _binders_exported(a: Action) -> frozenset:
    """Variables an action binds in the continuation of its prefix."""
    if isinstance(a, Select):
        return frozenset((a.bind,))
    if isinstance(a, Aggr):
        return frozenset(a.bind_template.names())
    return frozenset()


def free_vars(node) -> frozenset:
    """Free data/locality/table variables of any AST node."""
    if isinstance(node, (IntLit, StrLit, TidLit, LocLit, NilProc, NilNet, ErrNet,
                         TruePred, TableLiteral, TableComp, Template, BindData, BindLoc)):
        return frozenset()
    if isinstance(node, (DataVar, LocVar)):
        return frozenset((node.name,))
    if isinstance(node, (Concat, And)):
        return free_vars(node.left) | free_vars(node.right)
    if isinstance(node, Arith):
        return free_vars(node.left) | free_vars(node.right)
    if isinstance(node, Cmp):
        return free_vars(node.left) | free_vars(node.right)
    if isinstance(node, MultisetLit):
        out = frozenset()
        for e in node.elements:
            out |= free_vars(e)
        return out
    if isinstance(node, Member):
        return free_vars(node.elem) | free_vars(node.container)
    if isinstance(node, Not):
        return free_vars(node.inner)
    if isinstance(node, Tuple):
        out = frozenset()
        for e in node.components:
            out |= free_vars(e)
        return out
    if isinstance(node, TableByName):
        return free_vars(node.loc)
    if isinstance(node, TableByVar):
        return frozenset((node.name,))
    if isinstance(node, Insert):
        return free_vars(node.payload) | free_vars(node.loc)
    if isinstance(node, Delete):
        bound = frozenset(node.template.names())
        return (free_vars(node.pred) - bound) | free_vars(node.loc)
    if isinstance(node, Select):
        out = frozenset()
        for tb in node.tables:
            out |= free_vars(tb)
        bound = frozenset(node.template.names())
        return out | ((free_vars(node.pred) | free_vars(node.payload)) - bound)
    if isinstance(node, Update):
        bound = frozenset(node.template.names())
        return ((free_vars(node.pred) | free_vars(node.payload)) - bound) | free_vars(node.loc)
    if isinstance(node, Aggr):
        bound = frozenset(node.template.names())
        return (free_vars(node.pred) - bound) | free_vars(node.loc)
    if isinstance(node, (Create, Drop)):
        return free_vars(node.loc)
    if isinstance(node, Eval):
        return free_vars(node.process) | free_vars(node.loc)
    if isinstance(node, Prefix):
        return free_vars(node.action) | (free_vars(node.cont) - _binders_exported(node.action))
    if isinstance(node, CallProc):
        out = frozenset()
        for e in node.args:
            out |= free_vars(e)
        return out
    if isinstance(node, Foreach):
        bound = frozenset(node.template.names())
        return free_vars(node.table) | ((free_vars(node.pred) | free_vars(node.body)) - bound)
    if isinstance(node, Seq):
        return free_vars(node.first) | free_vars(node.second)
    if isinstance(node, ProcComp):
        return free_vars(node.process)
    if isinstance(node, ParComp):
        return free_vars(node.left) | free_vars(node.right)
    if isinstance(node, Node):
        return free_vars(node.component)
    if isinstance(node, ParNet):
        return free_vars(node.left) | free_vars(node.right)
    if isinstance(node, Restrict):
        return free_vars(node.inner)
    if isinstance(node, System):
        out = free_vars(node.main_net)
        for d in node.procedures.values():
            out |= free_vars(d.body) - frozenset(n for n, _ in d.params)
        return out
    raise TypeError(f"free_vars: unsupported node {type(node).__name__}")


def bound_vars(node) -> frozenset:
    """All variable names bound anywhere inside the node."""
    if isinstance(node, (IntLit, StrLit, TidLit, LocLit, DataVar, LocVar, TruePred,
                         NilProc, NilNet, ErrNet, TableLiteral, TableComp, TableByName,
                         TableByVar, CallProc)):
        return frozenset()
    if isinstance(node, (Concat, Arith, Cmp, And)):
        return frozenset()
    if isinstance(node, (MultisetLit, Member, Not, Tuple)):
        return frozenset()
    if isinstance(node, Template):
        return frozenset(node.names())
    if isinstance(node, Insert):
        return frozenset()
    if isinstance(node, Delete):
        return bound_vars(node.template)
    if isinstance(node, Select):
        return bound_vars(node.template) | frozenset((node.bind,))
    if isinstance(node, Update):
        return bound_vars(node.template)
    if isinstance(node, Aggr):
        return bound_vars(node.template) | bound_vars(node.bind_template)
    if isinstance(node, (Create, Drop)):
        return frozenset()
    if isinstance(node, Eval):
        return bound_vars(node.process)
    if isinstance(node, Prefix):
        return bound_vars(node.action) | bound_vars(node.cont)
    if isinstance(node, Foreach):
        return bound_vars(node.template) | bound_vars(node.body)
    if isinstance(node, Seq):
        return bound_vars(node.first) | bound_vars(node.second)
    if isinstance(node, ProcComp):
        return bound_vars(node.process)
    if isinstance(node, ParComp):
        return bound_vars(node.left) | bound_vars(node.right)
    if isinstance(node, Node):
        return bound_vars(node.component)
    if isinstance(node, ParNet):
        return bound_vars(node.left) | bound_vars(node.right)
    if isinstance(node, Restrict):
        return bound_vars(node.inner)
    if isinstance(node, System):
        out = bound_vars(node.main_net)
        for d in node.procedures.values():
            out |= frozenset(n for n, _ in d.params) | bound_vars(d.body)
        return out
    raise TypeError(f"bound_vars: unsupported node {type(node).__name__}")


def _locs_in_value(v) -> frozenset:
    if isinstance(v, VLoc):
        return frozenset((v.name,))
    if isinstance(v, VSet):
        out = frozenset()
        for e in v.elements.support():
            out |= _locs_in_value(e)
        return out
    return frozenset()


def _locs_in_rows(rows: Multiset) -> frozenset:
    out = frozenset()
    for row in rows.support():
        for v in row.components:
            out |= _locs_in_value(v)
    return out


def loc_names(node) -> frozenset:
    """All locality names occurring in the node, ignoring restriction binders."""
    if isinstance(node, LocLit):
        return frozenset((node.name,))
    if isinstance(node, (IntLit, StrLit, TidLit, DataVar, LocVar, TruePred, NilProc,
                         NilNet, ErrNet, TableByVar)):
        return frozenset()
    if isinstance(node, (Concat, Arith, Cmp)):
        return loc_names(node.left) | loc_names(node.right)
    if isinstance(node, And):
        return loc_names(node.left) | loc_names(node.right)
    if isinstance(node, MultisetLit):
        out = frozenset()
        for e in node.elements:
            out |= loc_names(e)
        return out
    if isinstance(node, Member):
        return loc_names(node.elem) | loc_names(node.container)
    if isinstance(node, Not):
        return loc_names(node.inner)
    if isinstance(node, Tuple):
        out = frozenset()
        for e in node.components:
            out |= loc_names(e)
        return out
    if isinstance(node, Template):
        return frozenset()
    if isinstance(node, TableByName):
        return loc_names(node.loc)
    if isinstance(node, TableLiteral):
        return _locs_in_rows(node.rows)
    if isinstance(node, Insert):
        return loc_names(node.payload) | loc_names(node.loc)
    if isinstance(node, Delete):
        return loc_names(node.pred) | loc_names(node.loc)
    if isinstance(node, Select):
        out = loc_names(node.pred) | loc_names(node.payload)
        for tb in node.tables:
            out |= loc_names(tb)
        return out
    if isinstance(node, Update):
        return loc_names(node.pred) | loc_names(node.payload) | loc_names(node.loc)
    if isinstance(node, Aggr):
        return loc_names(node.pred) | loc_names(node.loc)
    if isinstance(node, (Create, Drop)):
        return loc_names(node.loc)
    if isinstance(node, Eval):
        return loc_names(node.process) | loc_names(node.loc)
    if isinstance(node, Prefix):
        return loc_names(node.action) | loc_names(node.cont)
    if isinstance(node, CallProc):
        out = frozenset()
        for e in node.args:
            out |= loc_names(e)
        return out
    if isinstance(node, Foreach):
        return loc_names(node.table) | loc_names(node.pred) | loc_names(node.body)
    if isinstance(node, Seq):
        return loc_names(node.first) | loc_names(node.second)
    if isinstance(node, ProcComp):
        return loc_names(node.process)
    if isinstance(node, TableComp):
        return _locs_in_rows(node.rows)
    if isinstance(node, ParComp):
        return loc_names(node.left) | loc_names(node.right)
    if isinstance(node, Node):
        return frozenset((node.loc,)) | loc_names(node.component)
    if isinstance(node, ParNet):
        return loc_names(node.left) | loc_names(node.right)
    if isinstance(node, Restrict):
        return frozenset((node.loc,)) | loc_names(node.inner)
    raise TypeError(f"loc_names: unsupported node {type(node).__name__}")


def free_locs(net: Net) -> frozenset:
    """Locality names occurring free in a net (restriction binds)."""
    if isinstance(net, (NilNet, ErrNet)):
        return frozenset()
    if isinstance(net, ParNet):
        return free_locs(net.left) | free_locs(net.right)
    if isinstance(net, Restrict):
        return free_locs(net.inner) - frozenset((net.loc,))
    if isinstance(net, Node):
        return frozenset((net.loc,)) | loc_names(net.component)
    raise TypeError(f"free_locs: not a net: {type(net).__name__}")


def rename_localities(node, mapping: dict):
    """Rename free locality occurrences; restriction binders shadow."""
    if not mapping:
        return node
    ren = lambda name: mapping.get(name, name)  # noqa: E731
    if isinstance(node, LocLit):
        return LocLit(ren(node.name), span=node.span)
    if isinstance(node, (IntLit, StrLit, TidLit, DataVar, LocVar, TruePred,
                         NilProc, NilNet, ErrNet, TableByVar, Template)):
        return node
    if isinstance(node, Concat):
        return Concat(rename_localities(node.left, mapping),
                      rename_localities(node.right, mapping), span=node.span)
    if isinstance(node, Arith):
        return Arith(node.op, rename_localities(node.left, mapping),
                     rename_localities(node.right, mapping), span=node.span)
    if isinstance(node, MultisetLit):
        return MultisetLit(tuple(rename_localities(e, mapping) for e in node.elements),
                           span=node.span)
    if isinstance(node, Cmp):
        return Cmp(node.op, rename_localities(node.left, mapping),
                   rename_localities(node.right, mapping), span=node.span)
    if isinstance(node, Member):
        return Member(rename_localities(node.elem, mapping),
                      rename_localities(node.container, mapping), span=node.span)
    if isinstance(node, Not):
        return Not(rename_localities(node.inner, mapping), span=node.span)
    if isinstance(node, And):
        return And(rename_localities(node.left, mapping),
                   rename_localities(node.right, mapping), span=node.span)
    if isinstance(node, Tuple):
        return Tuple(tuple(rename_localities(e, mapping) for e in node.components),
                     span=node.span)
    if isinstance(node, TableByName):
        return TableByName(node.tid, rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, TableLiteral):
        return TableLiteral(node.interface, _rename_locs_rows(node.rows, mapping),
                            span=node.span)
    if isinstance(node, Insert):
        return Insert(node.tid, rename_localities(node.payload, mapping),
                      rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, Delete):
        return Delete(node.tid, node.template, rename_localities(node.pred, mapping),
                      rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, Select):
        return Select(tuple(rename_localities(tb, mapping) for tb in node.tables),
                      node.template, rename_localities(node.pred, mapping),
                      rename_localities(node.payload, mapping), node.bind, span=node.span)
    if isinstance(node, Update):
        return Update(node.tid, node.template, rename_localities(node.pred, mapping),
                      rename_localities(node.payload, mapping),
                      rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, Aggr):
        return Aggr(node.tid, node.template, rename_localities(node.pred, mapping),
                    node.fn, node.bind_template,
                    rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, Create):
        return Create(node.tid, rename_localities(node.loc, mapping), node.schema,
                      span=node.span)
    if isinstance(node, Drop):
        return Drop(node.tid, rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, Eval):
        return Eval(rename_localities(node.process, mapping),
                    rename_localities(node.loc, mapping), span=node.span)
    if isinstance(node, Prefix):
        return Prefix(rename_localities(node.action, mapping),
                      rename_localities(node.cont, mapping), span=node.span)
    if isinstance(node, CallProc):
        return CallProc(node.name, tuple(rename_localities(e, mapping) for e in node.args),
                        span=node.span)
    if isinstance(node, Foreach):
        return Foreach(rename_localities(node.table, mapping), node.template,
                       rename_localities(node.pred, mapping), node.order,
                       rename_localities(node.body, mapping), span=node.span)
    if isinstance(node, Seq):
        return Seq(rename_localities(node.first, mapping),
                   rename_localities(node.second, mapping), span=node.span)
    if isinstance(node, ProcComp):
        return ProcComp(rename_localities(node.process, mapping), span=node.span)
    if isinstance(node, TableComp):
        return TableComp(node.interface, _rename_locs_rows(node.rows, mapping),
                         span=node.span)
    if isinstance(node, ParComp):
        return ParComp(rename_localities(node.left, mapping),
                       rename_localities(node.right, mapping), span=node.span)
    if isinstance(node, ParNet):
        return ParNet(rename_localities(node.left, mapping),
                      rename_localities(node.right, mapping), span=node.span)
    if isinstance(node, Restrict):
        inner_map = {k: v for k, v in mapping.items() if k != node.loc}
        return Restrict(node.loc, rename_localities(node.inner, inner_map), span=node.span)
    if isinstance(node, Node):
        return Node(mapping.get(node.loc, node.loc),
                    rename_localities(node.component, mapping), span=node.span)
    raise TypeError(f"rename_localities: unsupported node {type(node).__name__}")


def _rename_locs_value(v, mapping: dict):
    if isinstance(v, VLoc):
        return VLoc(mapping.get(v.name, v.name))
    if isinstance(v, VSet):
        return VSet(Multiset([_rename_locs_value(e, mapping) for e in v.elements]))
    return v


def _rename_locs_rows(rows: Multiset, mapping: dict) -> Multiset:
    return Multiset([
        ValueTuple(tuple(_rename_locs_value(v, mapping) for v in row.components))
        for row in rows
    ])
