"""Lexer and parser for the `.kdb` concrete syntax.

Lexical conventions: table identifiers are capitalized (`KLD`), variables are
lowercase (`tp`, `tbv`), localities carry a `$` sigil (`$l1`).  Template
fields bind data with `!x` and localities with `!@u`, so the parser can tell
the two kinds of binders apart without type information.

After building the AST the parser runs three passes: variable occurrences
are classified as data or locality variables according to their binders,
procedure calls are resolved against the declared procedures, and bound
names are renamed apart so that no binder name is reused anywhere in the
system (fresh names use a `#k` suffix, which the lexer forbids in source).
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

from kdb import syntax as s
from kdb.values import Multiset, ValueTuple, VInt, VLoc, VSet, VStr, VTid


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int, expected=()):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col
        self.expected = tuple(sorted(expected))

    def __str__(self) -> str:
        base = f"{self.line}:{self.col}: {self.message}"
        if self.expected:
            base += " (expected " + " or ".join(self.expected) + ")"
        return base


KEYWORDS = {
    "nil", "ERR", "true", "in", "sub",
    "insert", "delete", "select", "update", "aggr", "create", "drop", "eval",
    "foreach", "new", "let", "and", "schema", "table",
    "unordered", "asc", "desc", "lex",
    "sum", "avg", "count", "min", "max",
    "Int", "String", "Id", "Loc",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<int>\d+)
  | (?P<string>"(?:\\.|[^"\\\n])*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\|\||::|:=|!=|<=|>=|\+\+|&&|!@|[()\[\]{},.;@$!<>=+\-*/|:])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}


@dataclass(frozen=True)
class Token:
    kind: str  # INT STRING NAME TID keyword-or-op EOF
    text: str
    line: int
    col: int

    def span(self) -> s.Span:
        return s.Span(self.line, self.col)


def tokenize(source: str) -> list:
    tokens = []
    pos = 0
    line = 1
    line_start = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            col = pos - line_start + 1
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "ws" or kind == "comment":
            pass
        elif kind == "int":
            tokens.append(Token("INT", text, line, col))
        elif kind == "string":
            body = text[1:-1]
            out = []
            i = 0
            while i < len(body):
                c = body[i]
                if c == "\\":
                    i += 1
                    esc = body[i]
                    if esc not in _ESCAPES:
                        raise ParseError(f"unknown escape \\{esc}", line, col)
                    out.append(_ESCAPES[esc])
                else:
                    out.append(c)
                i += 1
            tokens.append(Token("STRING", "".join(out), line, col))
        elif kind == "ident":
            if text in KEYWORDS:
                tokens.append(Token(text, text, line, col))
            elif text[0].isupper():
                tokens.append(Token("TID", text, line, col))
            else:
                tokens.append(Token("NAME", text, line, col))
        else:
            tokens.append(Token(text, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, n - line_start + 1))
    return tokens


_CMP_TOKENS = ("=", "!=", "<", "<=", ">", ">=")
_BINOPS = ("++", "+", "-", "*", "/")
_ACTION_KEYWORDS = ("insert", "delete", "select", "update", "aggr", "create", "drop", "eval")


class _Parser:
    def __init__(self, tokens: list):
        self.tokens = tokens
        self.pos = 0

    # -- token plumbing

    def peek(self, ahead: int = 0) -> Token:
        i = min(self.pos + ahead, len(self.tokens) - 1)
        return self.tokens[i]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def at(self, *kinds) -> bool:
        return self.peek().kind in kinds

    def accept(self, kind):
        if self.at(kind):
            return self.next()
        return None

    def expect(self, kind, what=None) -> Token:
        t = self.peek()
        if t.kind != kind:
            raise ParseError(
                f"unexpected {self._describe(t)}", t.line, t.col,
                expected=(what or kind,),
            )
        return self.next()

    @staticmethod
    def _describe(t: Token) -> str:
        if t.kind == "EOF":
            return "end of input"
        return repr(t.text)

    def fail(self, message: str, expected=()):
        t = self.peek()
        raise ParseError(message, t.line, t.col, expected=expected)

    # -- entry point

    def system(self) -> s.System:
        decls = []
        while self.at("schema"):
            self.next()
            tid = self.expect("TID", "table identifier").text
            self.expect(":")
            decls.append((tid, self.schema()))
        procedures = {}
        if self.at("let"):
            self.next()
            while True:
                d = self.procdef()
                if d.name in procedures:
                    self.fail(f"procedure {d.name!r} defined twice")
                procedures[d.name] = d
                if self.accept("and"):
                    continue
                break
            self.expect("in")
        net = self.net()
        self.expect("EOF", "end of input")
        return s.System(procedures=procedures, schema_decls=tuple(decls), main_net=net)

    def procdef(self) -> s.ProcDef:
        t = self.expect("NAME", "procedure name")
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                pname = self.expect("NAME", "parameter name").text
                self.expect(":")
                params.append((pname, self.param_type()))
                if not self.accept(","):
                    break
        self.expect(")")
        self.expect(":=")
        body = self.process()
        if len({n for n, _ in params}) != len(params):
            raise ParseError(f"duplicate parameter name in {t.text!r}", t.line, t.col)
        return s.ProcDef(t.text, tuple(params), body, span=t.span())

    # -- types

    def param_type(self):
        if self.at("("):
            return self.schema()
        return self.mtype()

    def schema(self) -> s.Schema:
        self.expect("(", "schema")
        parts = [self.mtype()]
        while self.accept(","):
            parts.append(self.mtype())
        self.expect(")")
        return tuple(parts)

    def mtype(self) -> s.MType:
        if self.accept("{"):
            base = self.base_type()
            self.expect("}")
            return s.MSet(base)
        return s.Base(self.base_type())

    def base_type(self) -> str:
        for kw in ("Int", "String", "Id", "Loc"):
            if self.accept(kw):
                return kw
        self.fail("expected a column type", expected=("Int", "String", "Id", "Loc"))

    # -- nets and components

    def net(self) -> s.Net:
        left = self.net_atom()
        while self.accept("||"):
            left = s.ParNet(left, self.net_atom())
        return left

    def net_atom(self) -> s.Net:
        t = self.peek()
        if self.accept("nil"):
            return s.NilNet(span=t.span())
        if self.accept("ERR"):
            return s.ErrNet(span=t.span())
        if self.at("$"):
            self.next()
            loc = self.expect("NAME", "locality name").text
            self.expect("::")
            return s.Node(loc, self.component(), span=t.span())
        if self.at("("):
            if self.peek(1).kind == "new":
                self.next()
                self.next()
                self.expect("$")
                loc = self.expect("NAME", "locality name").text
                self.expect(")")
                return s.Restrict(loc, self.net_atom(), span=t.span())
            self.next()
            inner = self.net()
            self.expect(")")
            return inner
        self.fail("expected a net", expected=("nil", "ERR", "$", "("))

    def component(self) -> s.Component:
        left = self.comp_atom()
        while self.accept("|"):
            left = s.ParComp(left, self.comp_atom())
        return left

    def comp_atom(self) -> s.Component:
        t = self.peek()
        if self.at("table"):
            interface, rows = self.table_literal()
            return s.TableComp(interface, rows, span=t.span())
        if self.at("{"):
            self.next()
            inner = self.component()
            self.expect("}")
            return inner
        return s.ProcComp(self.process(), span=t.span())

    def table_literal(self):
        self.expect("table")
        tid = self.expect("TID", "table identifier").text
        self.expect(":")
        sk = self.schema()
        self.expect("=")
        rows = self.rows()
        return s.Interface(tid, sk), rows

    def rows(self) -> Multiset:
        self.expect("{")
        rows = []
        if not self.at("}"):
            while True:
                rows.append(self.row())
                if not self.accept(","):
                    break
        self.expect("}")
        return Multiset(rows)

    def row(self) -> ValueTuple:
        self.expect("(", "row")
        vals = [self.value()]
        while self.accept(","):
            vals.append(self.value())
        self.expect(")")
        return ValueTuple(tuple(vals))

    def value(self):
        t = self.peek()
        if self.at("INT"):
            return VInt(int(self.next().text))
        if self.at("-") and self.peek(1).kind == "INT":
            self.next()
            return VInt(-int(self.next().text))
        if self.at("STRING"):
            return VStr(self.next().text)
        if self.at("TID"):
            return VTid(self.next().text)
        if self.at("$"):
            self.next()
            return VLoc(self.expect("NAME", "locality name").text)
        if self.at("{"):
            self.next()
            elems = [self.scalar_value()]
            while self.accept(","):
                elems.append(self.scalar_value())
            self.expect("}")
            try:
                return VSet(Multiset(elems))
            except ValueError as exc:
                raise ParseError(str(exc), t.line, t.col) from None
        self.fail("expected a constant value")

    def scalar_value(self):
        t = self.peek()
        if self.at("{"):
            raise ParseError("multisets cannot nest", t.line, t.col)
        v = self.value()
        return v

    # -- processes

    def process(self) -> s.Process:
        first = self.proc_atom()
        if self.accept(";"):
            return s.Seq(first, self.process())
        return first

    def proc_atom(self) -> s.Process:
        t = self.peek()
        if self.accept("nil"):
            return s.NilProc(span=t.span())
        if self.at("("):
            self.next()
            inner = self.process()
            self.expect(")")
            return inner
        if self.at("foreach"):
            self.next()
            self.expect("(")
            table = self.tableref()
            self.expect(",")
            template = self.template()
            self.expect(",")
            pred = self.pred()
            self.expect(",")
            order = self.order()
            self.expect(")")
            self.expect(":")
            body = self.proc_atom()
            return s.Foreach(table, template, pred, order, body, span=t.span())
        if self.at(*_ACTION_KEYWORDS):
            action = self.action()
            self.expect(".", "'.' and a continuation")
            return s.Prefix(action, self.proc_atom(), span=t.span())
        if self.at("NAME"):
            name = self.next().text
            self.expect("(")
            args = []
            if not self.at(")"):
                while True:
                    args.append(self.expr())
                    if not self.accept(","):
                        break
            self.expect(")")
            return s.CallProc(name, tuple(args), span=t.span())
        self.fail(
            "expected a process",
            expected=("nil", "foreach", "a procedure call") + _ACTION_KEYWORDS,
        )

    def order(self) -> s.OrderSpec:
        if self.accept("unordered"):
            return s.Unordered()
        if self.accept("lex"):
            return s.Lex()
        for kw, cls in (("asc", s.Asc), ("desc", s.Desc)):
            if self.accept(kw):
                return cls(self.col_index())
        self.fail("expected a loop order", expected=("unordered", "asc", "desc", "lex"))

    def col_index(self) -> int:
        self.expect("[")
        t = self.expect("INT", "column index")
        self.expect("]")
        col = int(t.text)
        if col < 1:
            raise ParseError("column indices start at 1", t.line, t.col)
        return col

    def aggfn(self) -> s.AggrFn:
        if self.accept("count"):
            return s.AggCount()
        for kw, cls in (("sum", s.AggSum), ("avg", s.AggAvg), ("min", s.AggMin), ("max", s.AggMax)):
            if self.accept(kw):
                return cls(self.col_index())
        self.fail("expected an aggregator", expected=("sum", "avg", "count", "min", "max"))

    # -- actions

    def target(self):
        """`TID@loc` with loc a locality literal or variable."""
        tid = self.expect("TID", "table identifier").text
        self.expect("@")
        return tid, self.loc_expr()

    def loc_expr(self) -> s.Expr:
        t = self.peek()
        if self.accept("$"):
            return s.LocLit(self.expect("NAME", "locality name").text, span=t.span())
        if self.at("NAME"):
            return s.LocVar(self.next().text, span=t.span())
        self.fail("expected a locality", expected=("$", "a locality variable"))

    def action(self) -> s.Action:
        t = self.next()
        kw = t.kind
        self.expect("(")
        if kw == "insert":
            tid, loc = self.target()
            self.expect(",")
            payload = self.tuple_()
            self.expect(")")
            return s.Insert(tid, payload, loc, span=t.span())
        if kw == "delete":
            tid, loc = self.target()
            self.expect(",")
            template = self.template()
            self.expect(",")
            pred = self.pred()
            self.expect(")")
            return s.Delete(tid, template, pred, loc, span=t.span())
        if kw == "update":
            tid, loc = self.target()
            self.expect(",")
            template = self.template()
            self.expect(",")
            pred = self.pred()
            self.expect(",")
            payload = self.tuple_()
            self.expect(")")
            return s.Update(tid, template, pred, payload, loc, span=t.span())
        if kw == "aggr":
            tid, loc = self.target()
            self.expect(",")
            template = self.template()
            self.expect(",")
            pred = self.pred()
            self.expect(",")
            fn = self.aggfn()
            self.expect(",")
            bind_template = self.template()
            self.expect(")")
            return s.Aggr(tid, template, pred, fn, bind_template, loc, span=t.span())
        if kw == "create":
            tid, loc = self.target()
            self.expect(",")
            sk = self.schema()
            self.expect(")")
            return s.Create(tid, loc, sk, span=t.span())
        if kw == "drop":
            tid, loc = self.target()
            self.expect(")")
            return s.Drop(tid, loc, span=t.span())
        if kw == "eval":
            proc = self.process()
            self.expect(",")
            loc = self.loc_expr()
            self.expect(")")
            return s.Eval(proc, loc, span=t.span())
        if kw == "select":
            tables = [self.tableref()]
            self.expect(",")
            while not self._template_ahead():
                tables.append(self.tableref())
                self.expect(",")
            template = self.template()
            self.expect(",")
            pred = self.pred()
            self.expect(",")
            payload = self.tuple_()
            self.expect(",")
            self.expect("!")
            bind = self.expect("NAME", "table variable").text
            self.expect(")")
            return s.Select(tuple(tables), template, pred, payload, bind, span=t.span())
        raise AssertionError(kw)

    def _template_ahead(self) -> bool:
        return self.at("(") and self.peek(1).kind in ("!", "!@")

    def tableref(self) -> s.TableRef:
        t = self.peek()
        if self.at("table"):
            interface, rows = self.table_literal()
            return s.TableLiteral(interface, rows, span=t.span())
        if self.at("TID"):
            tid, loc = self.target()
            return s.TableByName(tid, loc, span=t.span())
        if self.at("NAME"):
            return s.TableByVar(self.next().text, span=t.span())
        self.fail("expected a table", expected=("TID@loc", "a table variable", "table"))

    # -- templates, tuples, predicates, expressions

    def template(self) -> s.Template:
        t = self.expect("(", "template")
        fields = [self.template_field()]
        while self.accept(","):
            fields.append(self.template_field())
        self.expect(")")
        seen = set()
        for f in fields:
            if f.name in seen:
                raise ParseError(
                    f"template binds {f.name!r} twice; binders must be linear",
                    f.span.line, f.span.col,
                )
            seen.add(f.name)
        return s.Template(tuple(fields), span=t.span())

    def template_field(self):
        t = self.peek()
        if self.accept("!@"):
            return s.BindLoc(self.expect("NAME", "locality variable").text, span=t.span())
        if self.accept("!"):
            return s.BindData(self.expect("NAME", "data variable").text, span=t.span())
        self.fail("expected a template field", expected=("!x", "!@u"))

    def tuple_(self) -> s.Tuple:
        t = self.expect("(", "tuple")
        comps = [self.expr()]
        while self.accept(","):
            comps.append(self.expr())
        self.expect(")")
        return s.Tuple(tuple(comps), span=t.span())

    def pred(self) -> s.Pred:
        left = self.pred_atom()
        while self.accept("&&"):
            left = s.And(left, self.pred_atom())
        return left

    def pred_atom(self) -> s.Pred:
        t = self.peek()
        if self.accept("true"):
            return s.TruePred(span=t.span())
        if self.accept("!"):
            return s.Not(self.pred_atom(), span=t.span())
        if self.at("("):
            # Could be a parenthesized predicate or a parenthesized expression
            # starting a comparison; try the former, fall back to the latter.
            mark = self.pos
            try:
                self.next()
                inner = self.pred()
                self.expect(")")
                if not self.at("in", "sub", *_CMP_TOKENS):
                    return inner
            except ParseError:
                pass
            self.pos = mark
        left = self.expr()
        if self.accept("in"):
            return s.Member(left, self.expr(), span=t.span())
        if self.accept("sub"):
            return s.Cmp("sub", left, self.expr(), span=t.span())
        for op in _CMP_TOKENS:
            if self.accept(op):
                return s.Cmp(op, left, self.expr(), span=t.span())
        self.fail("expected a comparison", expected=_CMP_TOKENS + ("in", "sub"))

    def expr(self) -> s.Expr:
        left = self.expr_atom()
        while True:
            matched = False
            for op in _BINOPS:
                if self.at(op):
                    t = self.next()
                    right = self.expr_atom()
                    if op == "++":
                        left = s.Concat(left, right, span=t.span())
                    else:
                        left = s.Arith(op, left, right, span=t.span())
                    matched = True
                    break
            if not matched:
                return left

    def expr_atom(self) -> s.Expr:
        t = self.peek()
        if self.at("INT"):
            return s.IntLit(int(self.next().text), span=t.span())
        if self.at("-") and self.peek(1).kind == "INT":
            self.next()
            return s.IntLit(-int(self.next().text), span=t.span())
        if self.at("STRING"):
            return s.StrLit(self.next().text, span=t.span())
        if self.at("TID"):
            return s.TidLit(self.next().text, span=t.span())
        if self.at("$"):
            self.next()
            return s.LocLit(self.expect("NAME", "locality name").text, span=t.span())
        if self.at("NAME"):
            # Data vs locality variable is settled by the classification pass.
            return s.DataVar(self.next().text, span=t.span())
        if self.at("{"):
            self.next()
            elems = [self.multiset_elem()]
            while self.accept(","):
                elems.append(self.multiset_elem())
            self.expect("}")
            return s.MultisetLit(tuple(elems), span=t.span())
        if self.at("("):
            self.next()
            inner = self.expr()
            self.expect(")")
            return inner
        self.fail("expected an expression")

    def multiset_elem(self) -> s.Expr:
        t = self.peek()
        e = self.expr()
        if _contains_multiset(e):
            raise ParseError("multisets cannot nest", t.line, t.col)
        return e


def _contains_multiset(e: s.Expr) -> bool:
    if isinstance(e, s.MultisetLit):
        return True
    if isinstance(e, (s.Concat, s.Arith)):
        return _contains_multiset(e.left) or _contains_multiset(e.right)
    return False


# ---------------------------------------------------------------------------
# Pass 1: classify bare variable occurrences as data vs locality

def _param_kind(ty) -> str:
    if isinstance(ty, tuple):
        return "table"
    if ty == s.LOC:
        return "loc"
    return "data"


def _template_kinds(template: s.Template) -> dict:
    return {
        f.name: ("loc" if isinstance(f, s.BindLoc) else "data")
        for f in template.fields
    }


def _classify_expr(e: s.Expr, env: dict) -> s.Expr:
    if isinstance(e, s.DataVar):
        if env.get(e.name) == "loc":
            return s.LocVar(e.name, span=e.span)
        return e
    if isinstance(e, s.LocVar):
        if env.get(e.name, "loc") != "loc":
            return s.DataVar(e.name, span=e.span)
        return e
    if isinstance(e, s.Concat):
        return s.Concat(_classify_expr(e.left, env), _classify_expr(e.right, env), span=e.span)
    if isinstance(e, s.Arith):
        return s.Arith(e.op, _classify_expr(e.left, env), _classify_expr(e.right, env), span=e.span)
    if isinstance(e, s.MultisetLit):
        return s.MultisetLit(tuple(_classify_expr(x, env) for x in e.elements), span=e.span)
    return e


def _classify_pred(p: s.Pred, env: dict) -> s.Pred:
    if isinstance(p, s.TruePred):
        return p
    if isinstance(p, s.Cmp):
        return s.Cmp(p.op, _classify_expr(p.left, env), _classify_expr(p.right, env), span=p.span)
    if isinstance(p, s.Member):
        return s.Member(_classify_expr(p.elem, env), _classify_expr(p.container, env), span=p.span)
    if isinstance(p, s.Not):
        return s.Not(_classify_pred(p.inner, env), span=p.span)
    if isinstance(p, s.And):
        return s.And(_classify_pred(p.left, env), _classify_pred(p.right, env), span=p.span)
    raise TypeError(p)


def _classify_tuple(t: s.Tuple, env: dict) -> s.Tuple:
    return s.Tuple(tuple(_classify_expr(e, env) for e in t.components), span=t.span)


def _classify_tableref(tb: s.TableRef, env: dict) -> s.TableRef:
    if isinstance(tb, s.TableByName):
        return s.TableByName(tb.tid, _classify_expr(tb.loc, env), span=tb.span)
    return tb


def _classify_action(a: s.Action, env: dict) -> s.Action:
    if isinstance(a, s.Insert):
        return s.Insert(a.tid, _classify_tuple(a.payload, env), _classify_expr(a.loc, env), span=a.span)
    if isinstance(a, s.Delete):
        inner = {**env, **_template_kinds(a.template)}
        return s.Delete(a.tid, a.template, _classify_pred(a.pred, inner),
                        _classify_expr(a.loc, env), span=a.span)
    if isinstance(a, s.Select):
        inner = {**env, **_template_kinds(a.template)}
        return s.Select(
            tuple(_classify_tableref(tb, env) for tb in a.tables),
            a.template,
            _classify_pred(a.pred, inner),
            _classify_tuple(a.payload, inner),
            a.bind,
            span=a.span,
        )
    if isinstance(a, s.Update):
        inner = {**env, **_template_kinds(a.template)}
        return s.Update(a.tid, a.template, _classify_pred(a.pred, inner),
                        _classify_tuple(a.payload, inner), _classify_expr(a.loc, env), span=a.span)
    if isinstance(a, s.Aggr):
        inner = {**env, **_template_kinds(a.template)}
        return s.Aggr(a.tid, a.template, _classify_pred(a.pred, inner), a.fn,
                      a.bind_template, _classify_expr(a.loc, env), span=a.span)
    if isinstance(a, s.Create):
        return s.Create(a.tid, _classify_expr(a.loc, env), a.schema, span=a.span)
    if isinstance(a, s.Drop):
        return s.Drop(a.tid, _classify_expr(a.loc, env), span=a.span)
    if isinstance(a, s.Eval):
        return s.Eval(_classify_process(a.process, env), _classify_expr(a.loc, env), span=a.span)
    raise TypeError(a)


def _action_export_kinds(a: s.Action) -> dict:
    if isinstance(a, s.Select):
        return {a.bind: "table"}
    if isinstance(a, s.Aggr):
        return _template_kinds(a.bind_template)
    return {}


def _classify_process(p: s.Process, env: dict) -> s.Process:
    if isinstance(p, s.NilProc):
        return p
    if isinstance(p, s.Prefix):
        action = _classify_action(p.action, env)
        cont_env = {**env, **_action_export_kinds(p.action)}
        return s.Prefix(action, _classify_process(p.cont, cont_env), span=p.span)
    if isinstance(p, s.CallProc):
        return s.CallProc(p.name, tuple(_classify_expr(e, env) for e in p.args), span=p.span)
    if isinstance(p, s.Foreach):
        inner = {**env, **_template_kinds(p.template)}
        return s.Foreach(_classify_tableref(p.table, env), p.template,
                         _classify_pred(p.pred, inner), p.order,
                         _classify_process(p.body, inner), span=p.span)
    if isinstance(p, s.Seq):
        return s.Seq(_classify_process(p.first, env), _classify_process(p.second, env), span=p.span)
    raise TypeError(p)


def _classify_component(c: s.Component, env: dict) -> s.Component:
    if isinstance(c, s.ProcComp):
        return s.ProcComp(_classify_process(c.process, env), span=c.span)
    if isinstance(c, s.ParComp):
        return s.ParComp(_classify_component(c.left, env), _classify_component(c.right, env), span=c.span)
    return c


def _classify_net(n: s.Net, env: dict) -> s.Net:
    if isinstance(n, (s.NilNet, s.ErrNet)):
        return n
    if isinstance(n, s.ParNet):
        return s.ParNet(_classify_net(n.left, env), _classify_net(n.right, env), span=n.span)
    if isinstance(n, s.Restrict):
        return s.Restrict(n.loc, _classify_net(n.inner, env), span=n.span)
    if isinstance(n, s.Node):
        return s.Node(n.loc, _classify_component(n.component, env), span=n.span)
    raise TypeError(n)


def classify_variables(system: s.System) -> s.System:
    procedures = {}
    for name, d in system.procedures.items():
        env = {pname: _param_kind(ty) for pname, ty in d.params}
        procedures[name] = s.ProcDef(d.name, d.params, _classify_process(d.body, env), span=d.span)
    return s.System(
        procedures=procedures,
        schema_decls=system.schema_decls,
        main_net=_classify_net(system.main_net, {}),
    )


# ---------------------------------------------------------------------------
# Pass 2: resolve procedure calls

def _walk_processes(node):
    """Yield every process subterm reachable from a net/process/component."""
    stack = [node]
    while stack:
        x = stack.pop()
        if isinstance(x, s.Prefix):
            yield x
            if isinstance(x.action, s.Eval):
                stack.append(x.action.process)
            stack.append(x.cont)
        elif isinstance(x, (s.CallProc, s.NilProc)):
            yield x
        elif isinstance(x, s.Foreach):
            yield x
            stack.append(x.body)
        elif isinstance(x, s.Seq):
            yield x
            stack.append(x.first)
            stack.append(x.second)
        elif isinstance(x, s.ProcComp):
            stack.append(x.process)
        elif isinstance(x, (s.ParComp, s.ParNet)):
            stack.append(x.left)
            stack.append(x.right)
        elif isinstance(x, s.Restrict):
            stack.append(x.inner)
        elif isinstance(x, s.Node):
            stack.append(x.component)


def resolve_calls(system: s.System) -> None:
    roots = [system.main_net] + [d.body for d in system.procedures.values()]
    for root in roots:
        for p in _walk_processes(root):
            if not isinstance(p, s.CallProc):
                continue
            d = system.procedures.get(p.name)
            where = p.span or s.Span(0, 0)
            if d is None:
                raise ParseError(f"call to undefined procedure {p.name!r}",
                                 where.line, where.col)
            if len(d.params) != len(p.args):
                raise ParseError(
                    f"procedure {p.name!r} takes {len(d.params)} argument(s), "
                    f"got {len(p.args)}",
                    where.line, where.col,
                )


# ---------------------------------------------------------------------------
# Pass 3: rename bound names apart

class _Renamer:
    """Makes every binder name unique across the whole system.

    Variables and localities live in separate namespaces.  A binder keeps
    its name on first use and gets a `#k`-suffixed fresh name on any reuse;
    `#` cannot appear in source names, so fresh names never collide.
    """

    def __init__(self, used_vars: set, used_locs: set):
        self.used_vars = used_vars
        self.used_locs = used_locs
        self.counter = itertools.count(1)

    def _fresh(self, base: str, used: set) -> str:
        while True:
            cand = f"{base}#{next(self.counter)}"
            if cand not in used:
                return cand

    def bind_var(self, name: str, venv: dict) -> tuple:
        if name in self.used_vars:
            new = self._fresh(name, self.used_vars)
        else:
            new = name
        self.used_vars.add(new)
        return new, {**venv, name: new}

    def bind_loc(self, name: str, lenv: dict) -> tuple:
        if name in self.used_locs:
            new = self._fresh(name, self.used_locs)
        else:
            new = name
        self.used_locs.add(new)
        return new, {**lenv, name: new}

    def template(self, t: s.Template, venv: dict) -> tuple:
        fields = []
        for f in t.fields:
            new, venv = self.bind_var(f.name, venv)
            cls = s.BindData if isinstance(f, s.BindData) else s.BindLoc
            fields.append(cls(new, span=f.span))
        return s.Template(tuple(fields), span=t.span), venv

    def expr(self, e: s.Expr, venv: dict, lenv: dict) -> s.Expr:
        if isinstance(e, s.DataVar):
            return s.DataVar(venv.get(e.name, e.name), span=e.span)
        if isinstance(e, s.LocVar):
            return s.LocVar(venv.get(e.name, e.name), span=e.span)
        if isinstance(e, s.LocLit):
            return s.LocLit(lenv.get(e.name, e.name), span=e.span)
        if isinstance(e, s.Concat):
            return s.Concat(self.expr(e.left, venv, lenv), self.expr(e.right, venv, lenv), span=e.span)
        if isinstance(e, s.Arith):
            return s.Arith(e.op, self.expr(e.left, venv, lenv), self.expr(e.right, venv, lenv), span=e.span)
        if isinstance(e, s.MultisetLit):
            return s.MultisetLit(tuple(self.expr(x, venv, lenv) for x in e.elements), span=e.span)
        return e

    def pred(self, p: s.Pred, venv: dict, lenv: dict) -> s.Pred:
        if isinstance(p, s.TruePred):
            return p
        if isinstance(p, s.Cmp):
            return s.Cmp(p.op, self.expr(p.left, venv, lenv), self.expr(p.right, venv, lenv), span=p.span)
        if isinstance(p, s.Member):
            return s.Member(self.expr(p.elem, venv, lenv), self.expr(p.container, venv, lenv), span=p.span)
        if isinstance(p, s.Not):
            return s.Not(self.pred(p.inner, venv, lenv), span=p.span)
        if isinstance(p, s.And):
            return s.And(self.pred(p.left, venv, lenv), self.pred(p.right, venv, lenv), span=p.span)
        raise TypeError(p)

    def tuple_(self, t: s.Tuple, venv: dict, lenv: dict) -> s.Tuple:
        return s.Tuple(tuple(self.expr(e, venv, lenv) for e in t.components), span=t.span)

    def value(self, v, lenv: dict):
        if isinstance(v, VLoc):
            return VLoc(lenv.get(v.name, v.name))
        if isinstance(v, VSet):
            return VSet(Multiset([self.value(e, lenv) for e in v.elements]))
        return v

    def rows(self, rows: Multiset, lenv: dict) -> Multiset:
        if not lenv:
            return rows
        return Multiset([
            ValueTuple(tuple(self.value(v, lenv) for v in row.components))
            for row in rows
        ])

    def tableref(self, tb: s.TableRef, venv: dict, lenv: dict) -> s.TableRef:
        if isinstance(tb, s.TableByName):
            return s.TableByName(tb.tid, self.expr(tb.loc, venv, lenv), span=tb.span)
        if isinstance(tb, s.TableByVar):
            return s.TableByVar(venv.get(tb.name, tb.name), span=tb.span)
        return s.TableLiteral(tb.interface, self.rows(tb.rows, lenv), span=tb.span)

    def action(self, a: s.Action, venv: dict, lenv: dict) -> tuple:
        """Returns the renamed action plus the continuation's variable env."""
        if isinstance(a, s.Insert):
            return s.Insert(a.tid, self.tuple_(a.payload, venv, lenv),
                            self.expr(a.loc, venv, lenv), span=a.span), venv
        if isinstance(a, s.Delete):
            template, inner = self.template(a.template, venv)
            return s.Delete(a.tid, template, self.pred(a.pred, inner, lenv),
                            self.expr(a.loc, venv, lenv), span=a.span), venv
        if isinstance(a, s.Select):
            tables = tuple(self.tableref(tb, venv, lenv) for tb in a.tables)
            template, inner = self.template(a.template, venv)
            pred = self.pred(a.pred, inner, lenv)
            payload = self.tuple_(a.payload, inner, lenv)
            bind, cont_env = self.bind_var(a.bind, venv)
            return s.Select(tables, template, pred, payload, bind, span=a.span), cont_env
        if isinstance(a, s.Update):
            template, inner = self.template(a.template, venv)
            return s.Update(a.tid, template, self.pred(a.pred, inner, lenv),
                            self.tuple_(a.payload, inner, lenv),
                            self.expr(a.loc, venv, lenv), span=a.span), venv
        if isinstance(a, s.Aggr):
            template, inner = self.template(a.template, venv)
            pred = self.pred(a.pred, inner, lenv)
            bind_template, cont_env = self.template(a.bind_template, venv)
            return s.Aggr(a.tid, template, pred, a.fn, bind_template,
                          self.expr(a.loc, venv, lenv), span=a.span), cont_env
        if isinstance(a, s.Create):
            return s.Create(a.tid, self.expr(a.loc, venv, lenv), a.schema, span=a.span), venv
        if isinstance(a, s.Drop):
            return s.Drop(a.tid, self.expr(a.loc, venv, lenv), span=a.span), venv
        if isinstance(a, s.Eval):
            return s.Eval(self.process(a.process, venv, lenv),
                          self.expr(a.loc, venv, lenv), span=a.span), venv
        raise TypeError(a)

    def process(self, p: s.Process, venv: dict, lenv: dict) -> s.Process:
        if isinstance(p, s.NilProc):
            return p
        if isinstance(p, s.Prefix):
            action, cont_env = self.action(p.action, venv, lenv)
            return s.Prefix(action, self.process(p.cont, cont_env, lenv), span=p.span)
        if isinstance(p, s.CallProc):
            return s.CallProc(p.name, tuple(self.expr(e, venv, lenv) for e in p.args), span=p.span)
        if isinstance(p, s.Foreach):
            table = self.tableref(p.table, venv, lenv)
            template, inner = self.template(p.template, venv)
            return s.Foreach(table, template, self.pred(p.pred, inner, lenv), p.order,
                             self.process(p.body, inner, lenv), span=p.span)
        if isinstance(p, s.Seq):
            return s.Seq(self.process(p.first, venv, lenv),
                         self.process(p.second, venv, lenv), span=p.span)
        raise TypeError(p)

    def component(self, c: s.Component, venv: dict, lenv: dict) -> s.Component:
        if isinstance(c, s.ProcComp):
            return s.ProcComp(self.process(c.process, venv, lenv), span=c.span)
        if isinstance(c, s.TableComp):
            return s.TableComp(c.interface, self.rows(c.rows, lenv), span=c.span)
        if isinstance(c, s.ParComp):
            return s.ParComp(self.component(c.left, venv, lenv),
                             self.component(c.right, venv, lenv), span=c.span)
        raise TypeError(c)

    def net(self, n: s.Net, venv: dict, lenv: dict) -> s.Net:
        if isinstance(n, (s.NilNet, s.ErrNet)):
            return n
        if isinstance(n, s.ParNet):
            return s.ParNet(self.net(n.left, venv, lenv), self.net(n.right, venv, lenv), span=n.span)
        if isinstance(n, s.Restrict):
            new, inner = self.bind_loc(n.loc, lenv)
            return s.Restrict(new, self.net(n.inner, venv, inner), span=n.span)
        if isinstance(n, s.Node):
            return s.Node(lenv.get(n.loc, n.loc), self.component(n.component, venv, lenv), span=n.span)
        raise TypeError(n)


def rename_apart(system: s.System) -> s.System:
    used_vars = set(s.free_vars(system))
    used_locs = set(s.free_locs(system.main_net))
    for d in system.procedures.values():
        used_locs |= s.loc_names(d.body)
    renamer = _Renamer(used_vars, used_locs)
    procedures = {}
    for name, d in system.procedures.items():
        venv: dict = {}
        params = []
        for pname, ty in d.params:
            new, venv = renamer.bind_var(pname, venv)
            params.append((new, ty))
        procedures[name] = s.ProcDef(
            d.name, tuple(params), renamer.process(d.body, venv, {}), span=d.span,
        )
    main = renamer.net(system.main_net, {}, {})
    return s.System(procedures=procedures, schema_decls=system.schema_decls, main_net=main)


# ---------------------------------------------------------------------------
# Entry point

def parse_system(source: str) -> s.System:
    """Parse a full system; raises ParseError on malformed input."""
    tokens = tokenize(source)
    system = _Parser(tokens).system()
    system = classify_variables(system)
    resolve_calls(system)
    return rename_apart(system)
