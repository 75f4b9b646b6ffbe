"""Evaluation, matching, substitution, projection, joins, orders, aggregation."""

import itertools
import random

import pytest

from fixtures import KLD_ROWS, KLD_SCHEMA, SEVEN_BINDERS, srow
from kdb import kernel as k
from kdb import syntax as s
from kdb.values import Multiset, ValueTuple, VInt, VLoc, VSet, VStr, VTid


def intlit(n):
    return s.IntLit(n)


class TestEvalExpr:
    def test_division_by_zero_yields_zero(self):
        assert k.eval_expr(s.Arith("/", intlit(6), intlit(0))) == VInt(0)

    def test_division_truncates_toward_zero(self):
        assert k.eval_expr(s.Arith("/", intlit(7), intlit(2))) == VInt(3)
        assert k.eval_expr(s.Arith("/", intlit(-7), intlit(2))) == VInt(-3)

    def test_concat(self):
        e = s.Concat(s.StrLit("ab"), s.StrLit("cd"))
        assert k.eval_expr(e) == VStr("abcd")

    def test_arith_on_string_errs(self):
        assert k.is_err(k.eval_expr(s.Arith("+", s.StrLit("a"), intlit(1))))

    def test_concat_on_int_errs(self):
        assert k.is_err(k.eval_expr(s.Concat(intlit(1), intlit(2))))

    def test_mixed_multiset_errs(self):
        e = s.MultisetLit((intlit(1), s.StrLit("x")))
        assert k.is_err(k.eval_expr(e))

    def test_homogeneous_multiset(self):
        e = s.MultisetLit((intlit(1), intlit(1), intlit(2)))
        assert k.eval_expr(e) == VSet(Multiset([VInt(1), VInt(1), VInt(2)]))

    def test_free_variable_errs(self):
        assert k.is_err(k.eval_expr(s.DataVar("x")))

    def test_huge_arithmetic_is_exact(self):
        e = s.Arith("*", intlit(2**70), intlit(3**40))
        assert k.eval_expr(e) == VInt(2**70 * 3**40)


class TestEvalPred:
    def test_conjunction_with_negation(self):
        p = s.And(s.Cmp("=", intlit(1), intlit(1)),
                  s.Not(s.Cmp("<", intlit(2), intlit(1))))
        assert k.eval_pred(p) is True

    def test_cross_type_compare_errs(self):
        assert k.is_err(k.eval_pred(s.Cmp("<", s.StrLit("a"), intlit(1))))

    def test_and_is_error_strict_even_when_other_side_false(self):
        bad = s.Cmp("=", s.StrLit("a"), intlit(1))
        p = s.And(s.Cmp("=", intlit(1), intlit(2)), bad)
        assert k.is_err(k.eval_pred(p))

    def test_ordering_on_localities_errs(self):
        assert k.is_err(k.eval_pred(s.Cmp("<", s.LocLit("a"), s.LocLit("b"))))
        assert k.eval_pred(s.Cmp("=", s.LocLit("a"), s.LocLit("a"))) is True

    def test_equality_on_table_ids(self):
        assert k.eval_pred(s.Cmp("!=", s.TidLit("A"), s.TidLit("B"))) is True
        assert k.is_err(k.eval_pred(s.Cmp("<=", s.TidLit("A"), s.TidLit("B"))))

    def test_string_ordering_is_lexicographic(self):
        assert k.eval_pred(s.Cmp("<", s.StrLit("abc"), s.StrLit("abd"))) is True

    def test_membership(self):
        container = s.MultisetLit((s.TidLit("KLD"), s.TidLit("SH")))
        assert k.eval_pred(s.Member(s.TidLit("KLD"), container)) is True
        assert k.eval_pred(s.Member(s.TidLit("LAM"), container)) is False

    def test_membership_wrong_kind_errs(self):
        container = s.MultisetLit((s.TidLit("KLD"),))
        assert k.is_err(k.eval_pred(s.Member(intlit(1), container)))

    def test_membership_needs_a_multiset(self):
        assert k.is_err(k.eval_pred(s.Member(intlit(1), intlit(2))))

    def test_proper_subset(self):
        small = s.MultisetLit((intlit(1),))
        big = s.MultisetLit((intlit(1), intlit(2)))
        assert k.eval_pred(s.Cmp("sub", small, big)) is True
        assert k.eval_pred(s.Cmp("sub", big, big)) is False
        assert k.eval_pred(s.Cmp("sub", big, small)) is False

    def test_subset_counts_multiplicity(self):
        one = s.MultisetLit((intlit(1),))
        two = s.MultisetLit((intlit(1), intlit(1)))
        assert k.eval_pred(s.Cmp("sub", one, two)) is True
        assert k.eval_pred(s.Cmp("sub", two, one)) is False


class TestEvalTuple:
    def test_componentwise(self):
        t = s.Tuple((s.Arith("+", intlit(1), intlit(1)),
                     s.Concat(s.StrLit("a"), s.StrLit("b"))))
        assert k.eval_tuple(t) == ValueTuple((VInt(2), VStr("ab")))

    def test_any_component_error_propagates(self):
        t = s.Tuple((intlit(1), s.Arith("+", s.StrLit("a"), intlit(1))))
        assert k.is_err(k.eval_tuple(t))

    def test_constant_row_evaluates_to_itself(self):
        t = s.Tuple(tuple(
            s.StrLit(x) if isinstance(x, str) else intlit(x)
            for x in ("001", "HB", "2015", "white", "37", 6, 0)
        ))
        assert k.eval_tuple(t) == srow("001", "HB", "2015", "white", "37", 6, 0)


class TestMatch:
    def test_pairs_bind_in_order(self):
        et = ValueTuple((VInt(5), VInt(7)))
        tpl = s.Template((s.BindData("x"), s.BindData("y")))
        assert k.match(et, tpl) == {"x": VInt(5), "y": VInt(7)}

    def test_arity_mismatch_errs(self):
        et = ValueTuple((VInt(5), VInt(7)))
        tpl = s.Template((s.BindData("x"), s.BindData("y"), s.BindData("z")))
        assert k.is_err(k.match(et, tpl))

    def test_locality_does_not_bind_data_field(self):
        assert k.is_err(k.match(ValueTuple((VLoc("l1"),)), s.Template((s.BindData("x"),))))

    def test_scalar_does_not_bind_locality_field(self):
        assert k.is_err(k.match(ValueTuple((VInt(1),)), s.Template((s.BindLoc("u"),))))

    def test_multiset_binds_data_field(self):
        v = VSet(Multiset([VLoc("l1")]))
        got = k.match(ValueTuple((v,)), s.Template((s.BindData("x"),)))
        assert got == {"x": v}

    def test_multiset_does_not_bind_locality_field(self):
        v = VSet(Multiset([VLoc("l1")]))
        assert k.is_err(k.match(ValueTuple((v,)), s.Template((s.BindLoc("u"),))))


class TestWellSorted:
    def test_kld_row_fits_kld_schema(self):
        assert k.well_sorted_value(srow("001", "HB", "2015", "white", "37", 6, 0), KLD_SCHEMA)

    def test_data_binder_never_fits_locality(self):
        assert not k.well_sorted_template(s.Template((s.BindData("x"),)), (s.LOC,))
        assert k.well_sorted_template(s.Template((s.BindLoc("u"),)), (s.LOC,))

    def test_arity_mismatch(self):
        assert not k.well_sorted_value(srow(1, 2), (s.INT,))
        assert not k.well_sorted_template(SEVEN_BINDERS, (s.INT,))

    def test_data_binder_fits_any_multiset(self):
        assert k.well_sorted_template(s.Template((s.BindData("x"),)), (s.MSet("Loc"),))

    def test_empty_multiset_fits_every_element_kind(self):
        empty = VSet(Multiset())
        assert k.well_sorted_value(empty, s.MSet("Int"))
        assert k.well_sorted_value(empty, s.MSet("Loc"))
        assert not k.well_sorted_value(empty, s.INT)


class TestSubstitution:
    def test_predicate_substitution(self):
        p = s.Cmp("=", s.DataVar("tp"), s.StrLit("HB"))
        got = k.apply_subst({"tp": VStr("SB")}, p)
        assert got == s.Cmp("=", s.StrLit("SB"), s.StrLit("HB"))

    def test_inner_binder_shadows(self):
        # x is rebound by the loop template, so inner occurrences stay put.
        body = s.Prefix(
            s.Insert("T", s.Tuple((s.DataVar("x"),)), s.LocLit("l1")), s.NilProc())
        loop = s.Foreach(
            s.TableByVar("tv"),
            s.Template((s.BindData("x"),)),
            s.TruePred(),
            s.Unordered(),
            body,
        )
        outer = s.Seq(
            s.Prefix(s.Insert("T", s.Tuple((s.DataVar("x"),)), s.LocLit("l1")), s.NilProc()),
            loop,
        )
        got = k.apply_subst({"x": VInt(5)}, outer)
        assert got.first.action.payload == s.Tuple((s.IntLit(5),))
        assert got.second.body.action.payload == s.Tuple((s.DataVar("x"),))

    def test_table_variable_substitution(self):
        table = s.TableLiteral(s.Interface(None, (s.INT,)), Multiset([srow(1)]))
        loop = s.Foreach(s.TableByVar("tbv"), s.Template((s.BindData("x"),)),
                         s.TruePred(), s.Unordered(), s.NilProc())
        got = k.apply_subst({"tbv": table}, loop)
        assert got.table == table

    def test_continuation_stops_at_select_rebind(self):
        inner = s.Prefix(
            s.Select((s.TableByVar("tv"),), s.Template((s.BindData("y"),)),
                     s.TruePred(), s.Tuple((s.DataVar("y"),)), "w"),
            s.Foreach(s.TableByVar("w"), s.Template((s.BindData("z"),)),
                      s.TruePred(), s.Unordered(), s.NilProc()),
        )
        got = k.apply_subst({"w": s.TableLiteral(s.Interface(None, (s.INT,)), Multiset())}, inner)
        # w is rebound by the select, so the loop over w is untouched.
        assert got.cont.table == s.TableByVar("w")


def naive_subst_with_indices(proc, name, value):
    """Oracle: rename every binder to a unique index first, then substitute
    free occurrences of `name` textually.  Agreement with apply_subst shows
    the scope rules are respected without the renaming."""
    counter = itertools.count()

    def walk_expr(e, env):
        if isinstance(e, s.DataVar):
            return value if e.name not in env and e.name == name else e
        if isinstance(e, s.Concat):
            return s.Concat(walk_expr(e.left, env), walk_expr(e.right, env))
        if isinstance(e, s.Arith):
            return s.Arith(e.op, walk_expr(e.left, env), walk_expr(e.right, env))
        if isinstance(e, s.MultisetLit):
            return s.MultisetLit(tuple(walk_expr(x, env) for x in e.elements))
        return e

    def walk_pred(p, env):
        if isinstance(p, s.Cmp):
            return s.Cmp(p.op, walk_expr(p.left, env), walk_expr(p.right, env))
        if isinstance(p, s.Member):
            return s.Member(walk_expr(p.elem, env), walk_expr(p.container, env))
        if isinstance(p, s.Not):
            return s.Not(walk_pred(p.inner, env))
        if isinstance(p, s.And):
            return s.And(walk_pred(p.left, env), walk_pred(p.right, env))
        return p

    def walk_proc(p, env):
        if isinstance(p, s.NilProc):
            return p
        if isinstance(p, s.Prefix):
            a = p.action
            if isinstance(a, s.Insert):
                a2 = s.Insert(a.tid, s.Tuple(tuple(walk_expr(e, env) for e in a.payload.components)), a.loc)
                return s.Prefix(a2, walk_proc(p.cont, env))
            if isinstance(a, s.Delete):
                env2 = env | {f.name: next(counter) for f in a.template.fields}
                a2 = s.Delete(a.tid, a.template, walk_pred(a.pred, env2), a.loc)
                return s.Prefix(a2, walk_proc(p.cont, env))
            raise AssertionError("oracle only covers insert/delete prefixes")
        if isinstance(p, s.Foreach):
            env2 = env | {f.name: next(counter) for f in p.template.fields}
            return s.Foreach(p.table, p.template, walk_pred(p.pred, env2), p.order,
                             walk_proc(p.body, env2))
        if isinstance(p, s.Seq):
            return s.Seq(walk_proc(p.first, env), walk_proc(p.second, env))
        raise AssertionError(type(p))

    return walk_proc(proc, {})


class TestSubstAgainstScopeOracle:
    def test_random_processes_agree_with_oracle(self):
        rng = random.Random(11)
        names = ["x", "y", "z"]

        def rand_expr(depth=2):
            if depth == 0 or rng.random() < 0.5:
                return rng.choice([s.IntLit(rng.randrange(5)), s.DataVar(rng.choice(names))])
            return s.Arith("+", rand_expr(depth - 1), rand_expr(depth - 1))

        def rand_pred():
            return s.Cmp("=", rand_expr(), rand_expr())

        def rand_template():
            picked = rng.sample(names, rng.randrange(1, 3))
            return s.Template(tuple(s.BindData(n) for n in picked))

        def rand_proc(depth):
            if depth == 0:
                return s.NilProc()
            c = rng.random()
            if c < 0.35:
                act = s.Insert("T", s.Tuple((rand_expr(),)), s.LocLit("l"))
                return s.Prefix(act, rand_proc(depth - 1))
            if c < 0.6:
                act = s.Delete("T", rand_template(), rand_pred(), s.LocLit("l"))
                return s.Prefix(act, rand_proc(depth - 1))
            if c < 0.85:
                return s.Foreach(s.TableByVar("tv"), rand_template(), rand_pred(),
                                 s.Unordered(), rand_proc(depth - 1))
            return s.Seq(rand_proc(depth - 1), rand_proc(depth - 1))

        for _ in range(300):
            proc = rand_proc(3)
            got = k.apply_subst({"x": VInt(9)}, proc)
            want = naive_subst_with_indices(proc, "x", s.IntLit(9))
            assert got == want


class TestMatchTotalityOnSortedInputs:
    def test_well_sorted_rows_always_match_well_typed_templates(self):
        # Operator-free rows fitting a schema must match any template that
        # the checker accepts against that schema.
        from kdb.typesys import Checker
        rng = random.Random(13)
        kinds = [s.INT, s.STRING, s.ID, s.LOC, s.MSet("Int"), s.MSet("Loc")]
        for trial in range(500):
            sk = tuple(rng.choice(kinds) for _ in range(rng.randrange(1, 5)))
            fields = tuple(
                s.BindLoc(f"v{i}") if t == s.LOC else s.BindData(f"v{i}")
                for i, t in enumerate(sk)
            )
            template = s.Template(fields)
            checker = Checker({})
            assert checker.type_template(sk, template) is not None
            vals = []
            for t in sk:
                if t == s.INT:
                    vals.append(VInt(rng.randrange(5)))
                elif t == s.STRING:
                    vals.append(VStr(rng.choice("ab")))
                elif t == s.ID:
                    vals.append(VTid("K"))
                elif t == s.LOC:
                    vals.append(VLoc("l1"))
                elif t == s.MSet("Int"):
                    vals.append(VSet(Multiset([VInt(rng.randrange(3))])))
                else:
                    vals.append(VSet(Multiset([VLoc("l2")])))
            row = ValueTuple(tuple(vals))
            assert k.well_sorted_value(row, sk)
            assert not k.is_err(k.match(row, template)), (sk, row)


class TestProjection:
    def test_three_column_projection(self):
        t = s.Tuple((s.DataVar("cr"), s.DataVar("sz"), s.DataVar("ss")))
        got = k.project_schema(KLD_SCHEMA, SEVEN_BINDERS, t)
        assert got == (s.STRING, s.STRING, s.INT)

    def test_identity_projection(self):
        t = s.Tuple(tuple(s.DataVar(n) for n in SEVEN_BINDERS.names()))
        assert k.project_schema(KLD_SCHEMA, SEVEN_BINDERS, t) == KLD_SCHEMA

    def test_constant_component_contributes_its_own_sort(self):
        t = s.Tuple((s.IntLit(42), s.DataVar("cr")))
        got = k.project_schema(KLD_SCHEMA, SEVEN_BINDERS, t)
        assert got == (s.INT, s.STRING)

    def test_unbound_variable_is_undefined(self):
        t = s.Tuple((s.DataVar("nope"),))
        assert k.project_schema(KLD_SCHEMA, SEVEN_BINDERS, t) is None

    def test_operator_component_is_undefined(self):
        t = s.Tuple((s.Arith("+", s.IntLit(1), s.IntLit(1)),))
        assert k.project_schema(KLD_SCHEMA, SEVEN_BINDERS, t) is None

    def test_identity_projection_on_random_schemas(self):
        rng = random.Random(5)
        kinds = ["Int", "String", "Id", "Loc"]
        for _ in range(200):
            sk = []
            fields = []
            for i in range(rng.randrange(1, 6)):
                kind = rng.choice(kinds)
                if kind != "Loc" and rng.random() < 0.3:
                    sk.append(s.MSet(kind))
                    fields.append(s.BindData(f"v{i}"))
                elif kind == "Loc":
                    sk.append(s.LOC)
                    fields.append(s.BindLoc(f"v{i}"))
                else:
                    sk.append(s.Base(kind))
                    fields.append(s.BindData(f"v{i}"))
            template = s.Template(tuple(fields))
            payload = s.Tuple(tuple(
                (s.LocVar if isinstance(f, s.BindLoc) else s.DataVar)(f.name)
                for f in fields
            ))
            assert k.project_schema(tuple(sk), template, payload) == tuple(sk)


class TestJoins:
    def test_single_named_table(self):
        refs = (s.TableByName("KLD", s.LocLit("l1")),)
        located = [("l1", s.Interface("KLD", KLD_SCHEMA), KLD_ROWS)]
        assert k.join_schemas(refs, located) == KLD_SCHEMA
        assert k.join_rows(refs, located) == KLD_ROWS

    def test_two_way_join_flattens(self):
        refs = (
            s.TableByName("KLD", s.LocLit("l1")),
            s.TableLiteral(s.Interface("KLD", KLD_SCHEMA), KLD_ROWS),
        )
        located = [("l1", s.Interface("KLD", KLD_SCHEMA), KLD_ROWS)]
        sk = k.join_schemas(refs, located)
        assert sk == KLD_SCHEMA + KLD_SCHEMA
        rows = k.join_rows(refs, located)
        assert len(rows) == len(KLD_ROWS) ** 2
        assert all(len(r) == 14 for r in rows.support())

    def test_unresolved_reference_is_undefined(self):
        refs = (s.TableByName("KLD", s.LocLit("l9")),)
        located = [("l1", s.Interface("KLD", KLD_SCHEMA), KLD_ROWS)]
        assert k.join_schemas(refs, located) is None
        assert k.join_rows(refs, located) is None

    def test_variable_reference_is_undefined(self):
        assert k.join_schemas((s.TableByVar("tbv"),), []) is None
        refs = (s.TableByName("KLD", s.LocVar("u")),)
        assert k.join_rows(refs, [("l1", s.Interface("KLD", KLD_SCHEMA), KLD_ROWS)]) is None

    def test_cardinality_matches_bruteforce_on_random_tables(self):
        rng = random.Random(7)
        for _ in range(100):
            tables = []
            for _ in range(rng.randrange(1, 4)):
                arity = rng.randrange(1, 3)
                rows = [
                    ValueTuple(tuple(VInt(rng.randrange(3)) for _ in range(arity)))
                    for _ in range(rng.randrange(0, 5))
                ]
                tables.append(s.TableLiteral(s.Interface("T", (s.INT,) * arity), Multiset(rows)))
            refs = tuple(tables)
            got = k.join_rows(refs, [])
            # Brute-force nested loops over expanded rows.
            expanded = [list(t.rows) for t in tables]
            combos = list(itertools.product(*expanded))
            want = Multiset([
                ValueTuple(tuple(v for row in combo for v in row.components))
                for combo in combos
            ])
            assert got == want


class TestMinimal:
    def test_ascending_singleton(self):
        rows = Multiset([srow(1), srow(2), srow(2)])
        assert k.minimal(rows, s.Asc(1)) == frozenset([srow(1)])

    def test_unordered_returns_support(self):
        rows = Multiset([srow(1), srow(2), srow(2)])
        assert k.minimal(rows, s.Unordered()) == rows.support()

    def test_ties_on_the_key_column_are_incomparable(self):
        rows = Multiset([srow(1, "a"), srow(1, "b"), srow(2, "c")])
        assert k.minimal(rows, s.Asc(1)) == frozenset([srow(1, "a"), srow(1, "b")])

    def test_descending_picks_maximum(self):
        rows = Multiset([srow(1), srow(3), srow(2)])
        assert k.minimal(rows, s.Desc(1)) == frozenset([srow(3)])

    def test_lex_agrees_with_total_sort_oracle(self):
        rng = random.Random(3)
        for _ in range(100):
            rows = Multiset([
                srow(rng.randrange(3), rng.choice("ab"))
                for _ in range(rng.randrange(1, 6))
            ])
            got = k.minimal(rows, s.Lex())
            from kdb.values import row_sort_key
            first = min(rows.support(), key=row_sort_key)
            want = frozenset(r for r in rows.support() if row_sort_key(r) == row_sort_key(first))
            assert got == want
            assert len(got) == 1


class TestAggregation:
    def _sales_matching(self, pred_col, pred_val):
        out = {}
        for row, n in KLD_ROWS.items():
            if row[pred_col].value == pred_val:
                out[row] = n
        return Multiset(out)

    def test_sum_of_sales_for_one_shoe_id(self):
        rows = self._sales_matching(0, "001")
        assert k.apply_aggr(s.AggSum(7), rows) == srow(12)

    def test_count_of_empty_is_zero(self):
        assert k.apply_aggr(s.AggCount(), Multiset()) == srow(0)

    def test_avg_floors_the_integer_division(self):
        rows = self._sales_matching(0, "001")
        # five rows summing to 12; the quotient floors to 2
        assert k.apply_aggr(s.AggAvg(7), rows) == srow(2)

    def test_sum_counts_multiplicity(self):
        rows = Multiset({srow("x", 3): 2})
        assert k.apply_aggr(s.AggSum(2), rows) == srow(6)

    def test_min_max_over_empty_are_zero(self):
        assert k.apply_aggr(s.AggMin(1), Multiset()) == srow(0)
        assert k.apply_aggr(s.AggMax(1), Multiset()) == srow(0)

    def test_min_max(self):
        rows = Multiset([srow(4), srow(9), srow(1)])
        assert k.apply_aggr(s.AggMin(1), rows) == srow(1)
        assert k.apply_aggr(s.AggMax(1), rows) == srow(9)

    def test_row_fit(self):
        assert k.aggr_row_ok(s.AggSum(7), srow("a", "b", "c", "d", "e", 1, 2))
        assert not k.aggr_row_ok(s.AggSum(7), srow("a", 1))
        assert not k.aggr_row_ok(s.AggSum(1), srow("a", 1))
        assert k.aggr_row_ok(s.AggCount(), srow("a"))

    def test_bind_fit(self):
        assert k.aggr_bind_ok(s.AggSum(1), s.Template((s.BindData("r"),)))
        assert not k.aggr_bind_ok(s.AggSum(1), s.Template((s.BindLoc("u"),)))
        assert not k.aggr_bind_ok(s.AggSum(1), s.Template((s.BindData("a"), s.BindData("b"))))
