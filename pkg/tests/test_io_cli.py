import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covbeta import cli
from covbeta.estimation import FitResult, fit
from covbeta.fisher import build_V
from covbeta.inference import gamma_inference
from covbeta.io import (InputError, build_graph, default_labels, format_dyad_covariates,
                        format_edge_list, format_node_covariates, parse_config,
                        parse_dyad_covariates, parse_edge_list, parse_node_covariates,
                        prune_degenerate)
from covbeta.model import DirectedGraph, DyadCovariates, NodeCovariates
from covbeta.simulation import SimDesign, make_covariates, make_truth, replicate_rng, sample_graph


def _dataset(n=50, seed=0):
    design = SimDesign(n, "zero", reps=1, seed=seed)
    rng = replicate_rng(seed, 0)
    nodes, Z = make_covariates(design, rng)
    return sample_graph(make_truth(design), Z, rng), nodes, Z


def _write_dataset(tmp_path, n=50, seed=0):
    g, nodes, Z = _dataset(n, seed)
    labels = np.arange(1, n + 1)
    edges = tmp_path / "edges.txt"
    cov = tmp_path / "nodes.csv"
    edges.write_text(format_edge_list(g, labels))
    cov.write_text(format_node_covariates(labels, nodes))
    return g, nodes, Z, edges, cov


class TestEdgeList:
    def test_parse_with_comments(self):
        el = parse_edge_list("# nodes: 4\n1 2\n\n# a comment\n2 3\n3\t1\n")
        assert el.edges == ((1, 2), (2, 3), (3, 1))
        assert el.lines == (2, 5, 6)
        assert el.declared_n == 4
        g = build_graph(el, default_labels(el))
        assert g.n == 4 and g.n_edges == 3

    def test_zero_based(self):
        el = parse_edge_list("0 1\n1 2\n")
        labels = default_labels(el, zero_based=True)
        assert labels.tolist() == [0, 1, 2]
        assert build_graph(el, labels).adj[0, 1] == 1

    def test_inferred_n(self):
        el = parse_edge_list("1 5\n")
        assert default_labels(el).tolist() == [1, 2, 3, 4, 5]
        assert default_labels(el, n=7).tolist() == list(range(1, 8))

    def test_duplicate_reports_both_lines(self):
        with pytest.raises(InputError, match=r":3: duplicate edge 1 -> 2 \(first on line 1\)"):
            parse_edge_list("1 2\n2 1\n1 2\n")

    def test_self_loop(self):
        with pytest.raises(InputError, match=":2: self-loop"):
            parse_edge_list("1 2\n3 3\n")

    @pytest.mark.parametrize("line", ["1 2 3", "a b", "1"])
    def test_malformed(self, line):
        with pytest.raises(InputError, match=":2:"):
            parse_edge_list(f"1 2\n{line}\n")

    def test_unknown_node(self):
        el = parse_edge_list("1 2\n2 9\n")
        with pytest.raises(InputError, match=":2: node 9"):
            build_graph(el, [1, 2, 3])

    def test_zero_label_in_one_based_file(self):
        el = parse_edge_list("0 1\n")
        with pytest.raises(InputError):
            build_graph(el, default_labels(el, n=3))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 12), data=st.data())
    def test_round_trip(self, n, data):
        bits = data.draw(st.lists(st.booleans(), min_size=n * n, max_size=n * n))
        A = np.array(bits, dtype=np.int8).reshape(n, n)
        np.fill_diagonal(A, 0)
        g = DirectedGraph(A)
        labels = np.arange(10, 10 + n)
        el = parse_edge_list(format_edge_list(g, labels))
        back = build_graph(el, labels)
        np.testing.assert_array_equal(back.adj, g.adj)


class TestCovariates:
    def test_node_round_trip(self):
        rng = np.random.default_rng(0)
        nodes = NodeCovariates(np.column_stack([rng.normal(size=6), rng.integers(0, 3, 6)]),
                               ("absdiff", "equal"), ("age", "office"))
        labels = np.array([3, 5, 8, 9, 12, 40])
        text = format_node_covariates(labels, nodes)
        assert text.splitlines()[0] == "node,age:absdiff,office:equal"
        lab2, nodes2 = parse_node_covariates(text)
        np.testing.assert_array_equal(lab2, labels)
        np.testing.assert_array_equal(nodes2.x, nodes.x)
        assert nodes2.transform == nodes.transform and nodes2.names == nodes.names

    def test_node_rows_sorted_by_label(self):
        labels, nodes = parse_node_covariates("node,x\n7,1.0\n2,3.0\n")
        assert labels.tolist() == [2, 7] and nodes.x[:, 0].tolist() == [3.0, 1.0]

    def test_default_transform(self):
        _, nodes = parse_node_covariates("node,x\n1,0.5\n2,0.25\n")
        assert nodes.transform == ("absdiff",)

    @pytest.mark.parametrize("text,where", [
        ("node,x:ratio\n1,2\n", ":1:"),
        ("node,x\n1,2\n1,3\n", ":3: node 1 listed twice"),
        ("node,x\n1,abc\n", ":2: non-numeric"),
        ("node,x\n1,nan\n", ":2: non-finite"),
        ("node,x\n1,2,3\n", ":2: expected 2 fields"),
        ("", "empty"),
    ])
    def test_node_errors(self, text, where):
        with pytest.raises(InputError, match=where):
            parse_node_covariates(text)

    def test_dyad_round_trip(self):
        rng = np.random.default_rng(1)
        Z = DyadCovariates(rng.normal(size=(5, 5, 2)))
        labels = np.array([2, 4, 6, 8, 10])
        names, Z2 = parse_dyad_covariates(format_dyad_covariates(labels, Z, ("a", "b")), labels)
        assert names == ("a", "b")
        np.testing.assert_array_equal(Z2.z, Z.z)

    def test_dyad_missing_pair(self):
        text = "src,dst,z\n1,2,0.5\n2,1,0.5\n1,3,0.1\n"
        with pytest.raises(InputError, match="ordered pairs missing"):
            parse_dyad_covariates(text, [1, 2, 3])

    def test_dyad_duplicate_pair(self):
        with pytest.raises(InputError, match=":3: pair"):
            parse_dyad_covariates("src,dst,z\n1,2,0.5\n1,2,0.5\n", [1, 2])

    def test_dyad_self_pair(self):
        with pytest.raises(InputError, match="self pair"):
            parse_dyad_covariates("src,dst,z\n1,1,0.5\n", [1, 2])


class TestPrune:
    def test_iterative_removal(self):
        # node 3 has no in-edges; once it goes, node 2 loses its only in-edge
        g = DirectedGraph.from_edges(4, [(0, 1), (1, 0), (3, 2), (2, 0)])
        keep, sub = prune_degenerate(g, np.arange(1, 5))
        assert keep.tolist() == [0, 1]
        assert (sub.out_degrees() > 0).all() and (sub.in_degrees() > 0).all()

    def test_everything_removed(self):
        with pytest.raises(InputError):
            prune_degenerate(DirectedGraph.from_edges(3, [(0, 1)]), np.arange(3))


class TestConfig:
    BASE = '[campaign]\nn = [100, 200]\nregimes = ["zero", "log"]\nreps = 10\nseed = 5\n'

    def test_grid(self):
        cfg = parse_config(self.BASE)
        ds = cfg["designs"]
        assert [(d.n, d.L_regime) for d in ds] == [(100, "zero"), (100, "log"),
                                                  (200, "zero"), (200, "log")]
        assert all(d.reps == 10 and d.seed == 5 for d in ds)
        assert cfg["workers"] == 1

    def test_overrides(self):
        ds = parse_config(self.BASE, overrides={"reps": 3, "seed": None})["designs"]
        assert ds[0].reps == 3 and ds[0].seed == 5

    def test_optional_keys(self):
        text = self.BASE + 'gamma_star = [0.5, 2.0]\npairs = [[1, 3]]\nlevel = 0.9\nworkers = 2\n'
        cfg = parse_config(text)
        d = cfg["designs"][0]
        assert d.gamma_star == (0.5, 2.0) and d.pairs == ((1, 3),) and d.level == 0.9
        assert cfg["workers"] == 2

    @pytest.mark.parametrize("text,match", [
        ('[campaign]\nn = 100\nregimes = ["steep"]\nreps = 1\nseed = 1\n', "invalid regime"),
        ('[campaign]\nn = 100\nregimes = ["zero"]\nreps = 0\nseed = 1\n', "reps"),
        ('[campaign]\nn = 100\nregimes = ["zero"]\nreps = 1\n', "seed"),
        ('[campaign]\nn = 100\nregimes = ["zero"]\nreps = 1\nseed = 1\nfoo = 2\n', "unknown key"),
        ('[campaign]\nn = 100\nregimes = ["zero"]\nreps = "x"\nseed = 1\n', "wrong type"),
        ('[other]\nn = 1\n', "single"),
        ('[campaign\n', "config"),
        ('[campaign]\nn = 100\nregimes = ["zero"]\nreps = 1\nseed = 1\np = 3\n', "gamma_star"),
    ])
    def test_invalid(self, text, match):
        with pytest.raises(InputError, match=match):
            parse_config(text)


class TestFitCommand:
    def test_round_trip_matches_in_memory_fit(self, tmp_path, capsys):
        g, nodes, Z, edges, cov = _write_dataset(tmp_path)
        out = tmp_path / "fit.json"
        code = cli.main(["fit", str(edges), "--covariates", str(cov), "--json", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())
        r = fit(g, Z)
        inf = gamma_inference(r, Z)
        assert rep["alpha"] == r.params.alpha.tolist()
        assert rep["beta"] == r.params.beta.tolist()
        assert rep["gamma"] == r.params.gamma.tolist()
        assert rep["gamma_bc"] == inf.gamma_bc.tolist()
        assert rep["se_gamma"] == inf.se_gamma.tolist()
        assert rep["v_diag"] == build_V(g.n, Z, r.params).v_diag.tolist()
        assert rep["labels"] == list(range(1, 51))
        assert rep["se_beta"][-1] is None
        text = capsys.readouterr().out
        assert "covariate" in text and "x1" in text

    def test_empty_edge_file_is_nonexistent(self, tmp_path, capsys):
        edges = tmp_path / "e.txt"
        edges.write_text("# nodes: 5\n")
        assert cli.main(["fit", str(edges)]) == 2
        assert "zero_out" in capsys.readouterr().err

    def test_nonexistence_names_nodes_by_label(self, tmp_path, capsys):
        edges = tmp_path / "e.txt"
        edges.write_text("10 20\n20 10\n20 30\n30 10\n")
        cov = tmp_path / "c.csv"
        cov.write_text("node,x\n10,0.1\n20,0.5\n30,0.9\n40,0.3\n")
        assert cli.main(["fit", str(edges), "--covariates", str(cov)]) == 2
        assert "[40]" in capsys.readouterr().err

    def test_malformed_file(self, tmp_path, capsys):
        edges = tmp_path / "e.txt"
        edges.write_text("1 2\n2 two\n")
        assert cli.main(["fit", str(edges)]) == 1
        assert "e.txt:2:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["fit", str(tmp_path / "absent.txt")]) == 1

    def test_force_attempts_fit(self, tmp_path):
        edges = tmp_path / "e.txt"
        edges.write_text("# nodes: 5\n")
        assert cli.main(["fit", str(edges), "--force"]) == 2

    def test_prune(self, tmp_path, capsys):
        g, nodes, Z, edges, cov = _write_dataset(tmp_path, n=30, seed=1)
        # add an isolated node 31 with a covariate row
        cov.write_text(cov.read_text() + "31,0.5,0.5\n")
        assert cli.main(["fit", str(edges), "--covariates", str(cov)]) == 2
        out = tmp_path / "fit.json"
        assert cli.main(["fit", str(edges), "--covariates", str(cov), "--prune",
                         "--json", str(out)]) == 0
        assert 31 not in json.loads(out.read_text())["labels"]

    def test_dyad_mode_and_zero_based(self, tmp_path):
        g, nodes, Z = _dataset(20, 2)
        labels = np.arange(20)
        edges = tmp_path / "e.txt"
        edges.write_text(format_edge_list(g, labels))
        cov = tmp_path / "z.csv"
        cov.write_text(format_dyad_covariates(labels, Z))
        out = tmp_path / "fit.json"
        code = cli.main(["fit", str(edges), "--zero-based", "--covariates", str(cov),
                         "--covariate-mode", "dyad", "--json", str(out)])
        assert code == 0
        assert json.loads(out.read_text())["gamma"] == fit(g, Z).params.gamma.tolist()

    def test_exact_inverse_flag_and_level(self, tmp_path):
        _, _, _, edges, cov = _write_dataset(tmp_path)
        out = tmp_path / "fit.json"
        assert cli.main(["fit", str(edges), "--covariates", str(cov), "--exact-inverse",
                         "--level", "0.9", "--json", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["info_mode"] == "exact" and rep["ci_level"] == 0.9

    def test_normalize_flag(self, tmp_path):
        _, _, _, edges, cov = _write_dataset(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        cli.main(["fit", str(edges), "--covariates", str(cov), "--json", str(a)])
        cli.main(["fit", str(edges), "--covariates", str(cov), "--normalize", "--json", str(b)])
        ga = np.array(json.loads(a.read_text())["gamma"])
        gb = np.array(json.loads(b.read_text())["gamma"])
        assert not np.allclose(ga, gb)

    def test_not_converged_exit_code(self, tmp_path, monkeypatch):
        _, _, _, edges, cov = _write_dataset(tmp_path)
        real_fit = cli.fit

        def stalled(*args, **kwargs):
            r = real_fit(*args, **kwargs)
            return FitResult(r.params, False, True, r.outer_iters, r.inner_iters,
                             r.final_score_norm, r.loglik, message="stalled")

        monkeypatch.setattr(cli, "fit", stalled)
        assert cli.main(["fit", str(edges), "--covariates", str(cov)]) == 3


class TestTestCommand:
    @pytest.fixture
    def report(self, tmp_path):
        _, _, _, edges, cov = _write_dataset(tmp_path)
        out = tmp_path / "fit.json"
        assert cli.main(["fit", str(edges), "--covariates", str(cov), "--json", str(out)]) == 0
        return out

    def test_zeta_same_node(self, report, capsys):
        capsys.readouterr()
        assert cli.main(["test", str(report), "--kind", "zeta", "--pair", "1,1"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "kind,i,j,statistic,p_value"
        stat, pval = map(float, lines[1].split(",")[3:])
        assert 0.0 <= pval <= 1.0

    def test_multiple_pairs(self, report, capsys):
        capsys.readouterr()
        assert cli.main(["test", str(report), "--kind", "xi", "--pair", "1,2",
                         "--pair", "3,4"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 3

    def test_same_node_invalid(self, report, capsys):
        assert cli.main(["test", str(report), "--kind", "xi", "--pair", "2,2"]) == 1
        assert "invalid pair" in capsys.readouterr().err

    def test_unknown_label(self, report):
        assert cli.main(["test", str(report), "--kind", "eta", "--pair", "1,99"]) == 1

    def test_bad_pair_syntax(self, report):
        assert cli.main(["test", str(report), "--kind", "eta", "--pair", "1-2"]) == 1


class TestSimulateAndQQ:
    CONFIG = '[campaign]\nn = 30\nregimes = ["zero"]\nreps = 1\nseed = 17\n'

    def test_smoke_and_determinism(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(self.CONFIG)
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["simulate", str(cfg), "--out", str(a)]) == 0
        assert cli.main(["simulate", str(cfg), "--out", str(b)]) == 0
        for name in ("table.csv", "qq_raw.csv", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["designs"][0]["seed"] == 17 and manifest["version"]
        assert len((a / "table.csv").read_text().splitlines()) == 8

    def test_cli_overrides(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(self.CONFIG)
        assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "o"), "--reps", "2",
                         "--seed", "3"]) == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["designs"][0]["reps"] == 2 and manifest["designs"][0]["seed"] == 3

    def test_invalid_config_fails_before_work(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(self.CONFIG.replace('"zero"', '"flat"'))
        assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert not (tmp_path / "o").exists()

    def test_qq_single_replicate(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(self.CONFIG)
        cli.main(["simulate", str(cfg), "--out", str(tmp_path)])
        capsys.readouterr()
        assert cli.main(["qq", str(tmp_path / "qq_raw.csv"), "--statistic", "xi_1_2"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert float(lines[1].split(",")[3]) == 0.0

    def test_qq_normal_input_is_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal(4000)
        raw = tmp_path / "raw.csv"
        raw.write_text("replicate,statistic,value\n" +
                       "".join(f"{k},xi,{float(v)!r}\n" for k, v in enumerate(vals)))
        out = tmp_path / "qq.csv"
        assert cli.main(["qq", str(raw), "--out", str(out)]) == 0
        pts = np.loadtxt(out, delimiter=",", skiprows=1, usecols=(3, 4))
        bulk = np.abs(pts[:, 0]) < 2
        assert np.abs(pts[bulk, 0] - pts[bulk, 1]).max() < 0.1

    def test_qq_bad_value(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        raw.write_text("replicate,statistic,value\n0,xi,0.5\n1,xi,oops\n")
        assert cli.main(["qq", str(raw)]) == 1
        assert "raw.csv:3:" in capsys.readouterr().err

    def test_qq_empty(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        raw.write_text("replicate,statistic,value\n")
        assert cli.main(["qq", str(raw)]) == 1
        assert "empty" in capsys.readouterr().err
