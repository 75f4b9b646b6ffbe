"""Static type checker.

Judgments follow the language's declarative rules; the checker adds error
recovery (siblings keep getting checked after a failure, dependents are
suppressed) and runs in time linear in the program text: environments are
mutated in place with an undo journal, so extension is O(1) per binding and
lookup is a dict hit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from kdb import syntax as s
from kdb.kernel import well_sorted_value
from kdb.values import ValueTuple


@dataclass
class Diagnostic:
    kind: str
    message: str
    span: Optional[s.Span] = None
    expected: Optional[str] = None
    found: Optional[str] = None

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        extra = ""
        if self.expected is not None or self.found is not None:
            extra = f" (expected {self.expected}, found {self.found})"
        return f"{where}{self.message}{extra}"

    def to_json(self) -> dict:
        return {
            "span": str(self.span) if self.span else None,
            "kind": self.kind,
            "message": self.message,
            "expected": self.expected,
            "found": self.found,
        }


# Environment entries
@dataclass(frozen=True)
class DataBind:
    mtype: s.MType


@dataclass(frozen=True)
class LocBind:
    pass


@dataclass(frozen=True)
class TableBind:
    schema: s.Schema


class TypeEnv:
    """Mutable scoped environment with O(1) extension and lookup."""

    def __init__(self, bindings=None):
        self._map: dict = {}
        self._journal: list = []
        if bindings:
            for name, st in bindings:
                self.bind(name, st)

    def lookup(self, name: str):
        return self._map.get(name)

    def bind(self, name: str, st) -> None:
        # Renaming apart means shadowing never happens for checked systems,
        # but programmatic ASTs may shadow; the journal restores the old entry.
        self._journal.append((name, self._map.get(name)))
        self._map[name] = st

    def mark(self) -> int:
        return len(self._journal)

    def undo(self, mark: int) -> None:
        while len(self._journal) > mark:
            name, old = self._journal.pop()
            if old is None:
                self._map.pop(name, None)
            else:
                self._map[name] = old


def _render_mtype(t) -> str:
    if t is None:
        return "?"
    if isinstance(t, tuple):
        return s.render_schema(t)
    return s.render_mtype(t)


_AGG_NAMES = {s.AggSum: "sum", s.AggAvg: "avg", s.AggMin: "min", s.AggMax: "max"}


class Checker:
    def __init__(self, nabla: dict, procedures: Optional[dict] = None):
        self.nabla = nabla
        self.procedures = procedures or {}
        self.diags: list = []

    # -- diagnostics

    def error(self, kind: str, message: str, span=None, expected=None, found=None):
        self.diags.append(Diagnostic(kind, message, span, expected, found))
        return None

    # -- expressions

    def type_expr(self, env: TypeEnv, e: s.Expr) -> Optional[s.MType]:
        if isinstance(e, s.IntLit):
            return s.INT
        if isinstance(e, s.StrLit):
            return s.STRING
        if isinstance(e, s.TidLit):
            return s.ID
        if isinstance(e, s.LocLit):
            return s.LOC
        if isinstance(e, s.DataVar):
            st = env.lookup(e.name)
            if st is None:
                return self.error("unbound-variable", f"unbound variable {e.name!r}", e.span)
            if isinstance(st, LocBind):
                return self.error("kind-mismatch",
                                  f"locality variable {e.name!r} used as data", e.span)
            if isinstance(st, TableBind):
                return self.error("kind-mismatch",
                                  f"table variable {e.name!r} used as data", e.span)
            return st.mtype
        if isinstance(e, s.LocVar):
            st = env.lookup(e.name)
            if st is None:
                return self.error("unbound-variable", f"unbound variable {e.name!r}", e.span)
            if not isinstance(st, LocBind):
                return self.error("kind-mismatch",
                                  f"{e.name!r} is not a locality variable", e.span)
            return s.LOC
        if isinstance(e, s.Concat):
            lt = self.type_expr(env, e.left)
            rt = self.type_expr(env, e.right)
            if lt is None or rt is None:
                return None
            if lt != s.STRING or rt != s.STRING:
                return self.error("operand-type", "concatenation needs two strings",
                                  e.span, expected="String",
                                  found=f"{_render_mtype(lt)} ++ {_render_mtype(rt)}")
            return s.STRING
        if isinstance(e, s.Arith):
            lt = self.type_expr(env, e.left)
            rt = self.type_expr(env, e.right)
            if lt is None or rt is None:
                return None
            if lt != s.INT or rt != s.INT:
                return self.error("operand-type", f"'{e.op}' needs two integers",
                                  e.span, expected="Int",
                                  found=f"{_render_mtype(lt)} {e.op} {_render_mtype(rt)}")
            return s.INT
        if isinstance(e, s.MultisetLit):
            if not e.elements:
                return self.error("empty-multiset",
                                  "cannot infer the element type of an empty multiset",
                                  e.span)
            kinds = set()
            failed = False
            for el in e.elements:
                t = self.type_expr(env, el)
                if t is None:
                    failed = True
                elif isinstance(t, s.MSet):
                    self.error("nested-multiset", "multisets cannot nest", e.span)
                    failed = True
                else:
                    kinds.add(t.kind)
            if failed:
                return None
            if len(kinds) != 1:
                return self.error("heterogeneous-multiset",
                                  "multiset elements must share one type", e.span,
                                  found=", ".join(sorted(kinds)))
            return s.MSet(kinds.pop())
        raise TypeError(f"not an expression: {e!r}")

    # -- predicates

    def type_pred(self, env: TypeEnv, p: s.Pred) -> bool:
        if isinstance(p, s.TruePred):
            return True
        if isinstance(p, s.Cmp):
            lt = self.type_expr(env, p.left)
            rt = self.type_expr(env, p.right)
            if lt is None or rt is None:
                return False
            if p.op == "sub":
                if not (isinstance(lt, s.MSet) and lt == rt):
                    self.error("operand-type", "'sub' compares two multisets of one type",
                               p.span, found=f"{_render_mtype(lt)} sub {_render_mtype(rt)}")
                    return False
                return True
            if not isinstance(lt, s.Base) or lt != rt:
                self.error("operand-type",
                           f"'{p.op}' compares two values of one scalar type",
                           p.span, found=f"{_render_mtype(lt)} {p.op} {_render_mtype(rt)}")
                return False
            if p.op in s.ORDERED_CMP_OPS and lt.kind not in ("Int", "String"):
                self.error("operand-type",
                           f"no ordering on {lt.kind} values", p.span,
                           expected="Int or String", found=lt.kind)
                return False
            return True
        if isinstance(p, s.Member):
            lt = self.type_expr(env, p.elem)
            rt = self.type_expr(env, p.container)
            if lt is None or rt is None:
                return False
            if not isinstance(lt, s.Base) or rt != s.MSet(lt.kind):
                self.error("operand-type", "'in' needs a scalar and a multiset of its type",
                           p.span, expected=f"{{{_render_mtype(lt)}}}",
                           found=_render_mtype(rt))
                return False
            return True
        if isinstance(p, s.Not):
            return self.type_pred(env, p.inner)
        if isinstance(p, s.And):
            a = self.type_pred(env, p.left)
            b = self.type_pred(env, p.right)
            return a and b
        raise TypeError(f"not a predicate: {p!r}")

    # -- tuples, templates, tables

    def type_tuple(self, env: TypeEnv, t: s.Tuple) -> Optional[s.Schema]:
        out = []
        for e in t.components:
            ty = self.type_expr(env, e)
            if ty is None:
                return None
            out.append(ty)
        return tuple(out)

    def type_template(self, sk: Optional[s.Schema], template: s.Template):
        """Returns the bindings a template derives from a schema, or None."""
        if sk is None:
            return None
        if len(template.fields) != len(sk):
            return self.error(
                "template-arity",
                f"template has {len(template.fields)} field(s), schema has {len(sk)}",
                template.span, expected=s.render_schema(sk),
                found=s.render(template),
            )
        out = []
        for f, ty in zip(template.fields, sk):
            if isinstance(f, s.BindData):
                if ty == s.LOC:
                    return self.error(
                        "binder-kind",
                        f"!{f.name} cannot bind a locality column; use !@{f.name}",
                        f.span)
                out.append((f.name, DataBind(ty)))
            else:
                if ty != s.LOC:
                    return self.error(
                        "binder-kind",
                        f"!@{f.name} can only bind a locality column",
                        f.span, expected="Loc", found=_render_mtype(ty))
                out.append((f.name, LocBind()))
        return out

    def _check_loc(self, env: TypeEnv, loc: s.Expr) -> bool:
        t = self.type_expr(env, loc)
        if t is None:
            return False
        if t != s.LOC:
            self.error("operand-type", "a locality is required here", loc.span,
                       expected="Loc", found=_render_mtype(t))
            return False
        return True

    def _schema_of(self, tid: str, span) -> Optional[s.Schema]:
        sk = self.nabla.get(tid)
        if sk is None:
            return self.error("unknown-table", f"no schema known for table {tid!r}", span)
        return sk

    def type_table(self, env: TypeEnv, tb: s.TableRef) -> Optional[s.Schema]:
        if isinstance(tb, s.TableByName):
            if not self._check_loc(env, tb.loc):
                return None
            return self._schema_of(tb.tid, tb.span)
        if isinstance(tb, s.TableByVar):
            st = env.lookup(tb.name)
            if st is None:
                return self.error("unbound-variable",
                                  f"unbound table variable {tb.name!r}", tb.span)
            if not isinstance(st, TableBind):
                return self.error("kind-mismatch",
                                  f"{tb.name!r} is not a table variable", tb.span)
            return st.schema
        if isinstance(tb, s.TableLiteral):
            if self._check_rows(tb.interface, tb.rows, tb.span):
                if tb.interface.tid is not None:
                    sk = self.nabla.get(tb.interface.tid)
                    if sk is not None and sk != tb.interface.schema:
                        return self.error(
                            "schema-conflict",
                            f"table {tb.interface.tid!r} declared with a different schema",
                            tb.span, expected=s.render_schema(sk),
                            found=s.render_schema(tb.interface.schema))
                return tb.interface.schema
            return None
        raise TypeError(f"not a table reference: {tb!r}")

    def _check_rows(self, interface: s.Interface, rows, span) -> bool:
        sk = interface.schema
        bad = None
        for row in rows.support():
            if not well_sorted_value(row, sk):
                bad = row
                break
        if bad is not None:
            self.error("row-format",
                       f"row {s.render_row(bad)} does not fit the table schema",
                       span, expected=s.render_schema(sk), found=s.render_row(bad))
            return False
        return True

    # -- actions

    def type_action(self, env: TypeEnv, a: s.Action):
        """Returns the bindings the action exports to its continuation, or None."""
        if isinstance(a, s.Insert):
            sk = self._schema_of(a.tid, a.span)
            tt = self.type_tuple(env, a.payload)
            okl = self._check_loc(env, a.loc)
            if sk is None or tt is None or not okl:
                return None
            if tt != sk:
                return self.error("payload-format",
                                  f"inserted row does not fit table {a.tid!r}",
                                  a.span, expected=s.render_schema(sk),
                                  found=s.render_schema(tt))
            return []
        if isinstance(a, s.Delete):
            sk = self._schema_of(a.tid, a.span)
            binds = self.type_template(sk, a.template)
            okl = self._check_loc(env, a.loc)
            if binds is None or not okl:
                return None
            ok = self._with_bindings(env, binds, lambda: self.type_pred(env, a.pred))
            return [] if ok else None
        if isinstance(a, s.Select):
            parts = []
            failed = False
            for tb in a.tables:
                t = self.type_table(env, tb)
                if t is None:
                    failed = True
                else:
                    parts.extend(t)
            if failed:
                return None
            binds = self.type_template(tuple(parts), a.template)
            if binds is None:
                return None
            for e in a.payload.components:
                # The result schema is projected from the payload before any
                # evaluation, so components must be constants or variables.
                if not _projectable(e):
                    return self.error(
                        "select-payload",
                        "selection payloads are built from constants and variables",
                        a.span, found=s.render(e))
            result = {}

            def body():
                ok = self.type_pred(env, a.pred)
                result["payload"] = self.type_tuple(env, a.payload)
                return ok

            ok = self._with_bindings(env, binds, body)
            if not ok or result.get("payload") is None:
                return None
            return [(a.bind, TableBind(result["payload"]))]
        if isinstance(a, s.Update):
            sk = self._schema_of(a.tid, a.span)
            binds = self.type_template(sk, a.template)
            okl = self._check_loc(env, a.loc)
            if binds is None or not okl:
                return None
            result = {}

            def body():
                ok = self.type_pred(env, a.pred)
                result["payload"] = self.type_tuple(env, a.payload)
                return ok

            ok = self._with_bindings(env, binds, body)
            if not ok or result.get("payload") is None:
                return None
            if result["payload"] != sk:
                return self.error("payload-format",
                                  f"updated row does not fit table {a.tid!r}",
                                  a.span, expected=s.render_schema(sk),
                                  found=s.render_schema(result["payload"]))
            return []
        if isinstance(a, s.Aggr):
            sk = self._schema_of(a.tid, a.span)
            binds = self.type_template(sk, a.template)
            okl = self._check_loc(env, a.loc)
            if binds is None or not okl:
                return None
            if not self._with_bindings(env, binds, lambda: self.type_pred(env, a.pred)):
                return None
            if not isinstance(a.fn, s.AggCount):
                col = a.fn.col
                if not (1 <= col <= len(sk)) or sk[col - 1] != s.INT:
                    name = _AGG_NAMES[type(a.fn)]
                    return self.error(
                        "aggregator-signature",
                        f"{name}[{col}] needs an Int column {col} in table {a.tid!r}",
                        a.span, expected="Int",
                        found=_render_mtype(sk[col - 1]) if 1 <= col <= len(sk) else "no such column")
            out_binds = self.type_template((s.INT,), a.bind_template)
            if out_binds is None:
                return None
            return out_binds
        if isinstance(a, s.Create):
            okl = self._check_loc(env, a.loc)
            sk = self._schema_of(a.tid, a.span)
            if not okl or sk is None:
                return None
            if sk != a.schema:
                return self.error("schema-conflict",
                                  f"create declares a different schema for {a.tid!r}",
                                  a.span, expected=s.render_schema(sk),
                                  found=s.render_schema(a.schema))
            return []
        if isinstance(a, s.Drop):
            return [] if self._check_loc(env, a.loc) else None
        if isinstance(a, s.Eval):
            okp = self.type_process(env, a.process)
            okl = self._check_loc(env, a.loc)
            return [] if okp and okl else None
        raise TypeError(f"not an action: {a!r}")

    def _with_bindings(self, env: TypeEnv, binds, thunk) -> bool:
        mark = env.mark()
        for name, st in binds:
            if env.lookup(name) is not None:
                # Renaming apart makes shadowing impossible in parsed systems.
                self.error("shadowing", f"binder {name!r} shadows an existing binding")
            env.bind(name, st)
        try:
            return bool(thunk())
        finally:
            env.undo(mark)

    # -- processes, components, nets

    def type_process(self, env: TypeEnv, p: s.Process) -> bool:
        if isinstance(p, s.NilProc):
            return True
        if isinstance(p, s.Prefix):
            binds = self.type_action(env, p.action)
            if binds is None:
                return False
            return self._with_bindings(env, binds, lambda: self.type_process(env, p.cont))
        if isinstance(p, s.CallProc):
            d = self.procedures.get(p.name)
            if d is None:
                self.error("unknown-procedure", f"call to undefined procedure {p.name!r}",
                           p.span)
                return False
            if len(d.params) != len(p.args):
                self.error("call-arity",
                           f"procedure {p.name!r} takes {len(d.params)} argument(s)",
                           p.span, expected=str(len(d.params)), found=str(len(p.args)))
                return False
            ok = True
            for (pname, ty), arg in zip(d.params, p.args):
                at = self.type_expr(env, arg)
                if at is None:
                    ok = False
                    continue
                if isinstance(ty, tuple):
                    self.error("call-argument",
                               f"parameter {pname!r} wants a table; expressions cannot supply one",
                               p.span)
                    ok = False
                elif at != ty:
                    self.error("call-argument",
                               f"argument for {pname!r} has the wrong type", p.span,
                               expected=_render_mtype(ty), found=_render_mtype(at))
                    ok = False
            return ok
        if isinstance(p, s.Foreach):
            sk = self.type_table(env, p.table)
            binds = self.type_template(sk, p.template)
            if binds is None:
                return False

            def body():
                ok = self.type_pred(env, p.pred)
                return self.type_process(env, p.body) and ok

            if not isinstance(p.order, (s.Unordered, s.Lex)):
                if not (1 <= p.order.col <= len(sk)):
                    self.error("order-column", "loop order names a missing column", p.span)
                    return False
            return self._with_bindings(env, binds, body)
        if isinstance(p, s.Seq):
            a = self.type_process(env, p.first)
            b = self.type_process(env, p.second)
            return a and b
        raise TypeError(f"not a process: {p!r}")

    def type_component(self, env: TypeEnv, c: s.Component) -> bool:
        if isinstance(c, s.ProcComp):
            return self.type_process(env, c.process)
        if isinstance(c, s.TableComp):
            if c.interface.tid is None:
                self.error("anonymous-table",
                           "a nameless table cannot stand as a component", c.span)
                return False
            sk = self.nabla.get(c.interface.tid)
            if sk is None:
                self.error("unknown-table",
                           f"no schema known for table {c.interface.tid!r}", c.span)
                return False
            if sk != c.interface.schema:
                self.error("schema-conflict",
                           f"table {c.interface.tid!r} carries a different schema",
                           c.span, expected=s.render_schema(sk),
                           found=s.render_schema(c.interface.schema))
                return False
            return self._check_rows(c.interface, c.rows, c.span)
        if isinstance(c, s.ParComp):
            a = self.type_component(env, c.left)
            b = self.type_component(env, c.right)
            return a and b
        raise TypeError(f"not a component: {c!r}")

    def type_net(self, env: TypeEnv, n: s.Net) -> bool:
        if isinstance(n, s.NilNet):
            return True
        if isinstance(n, s.ErrNet):
            self.error("error-net", "the error net is never well-typed", n.span)
            return False
        if isinstance(n, s.ParNet):
            a = self.type_net(env, n.left)
            b = self.type_net(env, n.right)
            return a and b
        if isinstance(n, s.Restrict):
            return self.type_net(env, n.inner)
        if isinstance(n, s.Node):
            return self.type_component(env, n.component)
        raise TypeError(f"not a net: {n!r}")


def _projectable(e: s.Expr) -> bool:
    if isinstance(e, (s.IntLit, s.StrLit, s.TidLit, s.LocLit, s.DataVar, s.LocVar)):
        return True
    if isinstance(e, s.MultisetLit):
        return all(isinstance(x, (s.IntLit, s.StrLit, s.TidLit, s.LocLit))
                   for x in e.elements)
    return False


def _param_binding(ty):
    if isinstance(ty, tuple):
        return TableBind(ty)
    if ty == s.LOC:
        return LocBind()
    return DataBind(ty)


def _collect_table_shapes(system: s.System):
    """Every (tid, schema, span) asserted by literals and create actions."""
    out = []

    def from_component(c: s.Component):
        if isinstance(c, s.TableComp):
            if c.interface.tid is not None:
                out.append((c.interface.tid, c.interface.schema, c.span))
        elif isinstance(c, s.ParComp):
            from_component(c.left)
            from_component(c.right)

    def from_net(n: s.Net):
        if isinstance(n, s.ParNet):
            from_net(n.left)
            from_net(n.right)
        elif isinstance(n, s.Restrict):
            from_net(n.inner)
        elif isinstance(n, s.Node):
            from_component(n.component)

    def from_process(p: s.Process):
        if isinstance(p, s.Prefix):
            from_action(p.action)
            from_process(p.cont)
        elif isinstance(p, s.Foreach):
            from_tableref(p.table)
            from_process(p.body)
        elif isinstance(p, s.Seq):
            from_process(p.first)
            from_process(p.second)

    def from_tableref(tb):
        if isinstance(tb, s.TableLiteral) and tb.interface.tid is not None:
            out.append((tb.interface.tid, tb.interface.schema, tb.span))

    def from_action(a: s.Action):
        if isinstance(a, s.Create):
            out.append((a.tid, a.schema, a.span))
        elif isinstance(a, s.Select):
            for tb in a.tables:
                from_tableref(tb)
        elif isinstance(a, s.Eval):
            from_process(a.process)

    from_net(system.main_net)
    for d in system.procedures.values():
        from_process(d.body)

    # Process parts of the net were not walked above; do them now.
    def procs_in_net(n: s.Net):
        if isinstance(n, s.ParNet):
            procs_in_net(n.left)
            procs_in_net(n.right)
        elif isinstance(n, s.Restrict):
            procs_in_net(n.inner)
        elif isinstance(n, s.Node):
            procs_in_component(n.component)

    def procs_in_component(c: s.Component):
        if isinstance(c, s.ProcComp):
            from_process(c.process)
        elif isinstance(c, s.ParComp):
            procs_in_component(c.left)
            procs_in_component(c.right)

    procs_in_net(system.main_net)
    return out


def build_schema_map(system: s.System):
    """Union of schema declarations, table literals, and create actions.

    Returns (mapping, diagnostics); any tid asserted with two different
    shapes is a conflict.
    """
    nabla: dict = {}
    diags: list = []
    sources = [(tid, sk, None) for tid, sk in system.schema_decls]
    sources.extend(_collect_table_shapes(system))
    for tid, sk, span in sources:
        old = nabla.get(tid)
        if old is None:
            nabla[tid] = sk
        elif old != sk:
            diags.append(Diagnostic(
                "schema-conflict",
                f"table {tid!r} is used with two different schemas",
                span, expected=s.render_schema(old), found=s.render_schema(sk)))
    return nabla, diags


def check_system(system: s.System) -> list:
    """All diagnostics for a system; an empty list means well-typed."""
    nabla, diags = build_schema_map(system)
    checker = Checker(nabla, system.procedures)
    checker.diags = diags
    for d in system.procedures.values():
        env = TypeEnv([(name, _param_binding(ty)) for name, ty in d.params])
        checker.type_process(env, d.body)
    checker.type_net(TypeEnv(), system.main_net)
    leftover = s.free_vars(system.main_net)
    if leftover:
        names = ", ".join(sorted(leftover))
        checker.diags.append(Diagnostic(
            "open-system", f"the net has free variables: {names}"))
    return checker.diags


def check_net(net: s.Net, nabla: dict, procedures: Optional[dict] = None) -> list:
    """Diagnostics for a bare net under a given schema map."""
    checker = Checker(nabla, procedures or {})
    checker.type_net(TypeEnv(), net)
    return checker.diags
