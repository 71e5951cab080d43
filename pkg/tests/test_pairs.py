import random
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from effectmod import datasets
from effectmod.exceptions import InputError
from effectmod.pairs import (
    DiscordantSummary,
    PairRecord,
    Partition,
    PatientRecord,
    PatientSchema,
    crosstab,
    load_pairs,
    load_patients,
    repair_exact,
    summarize,
    write_pairs,
)

DATA = Path(__file__).parent / "data"
SCHEMA = PatientSchema(stratum=("proc",), refinement=("chf", "er"), outcomes=("death",))


def write(tmp_path, text, name="patients.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadPatients:
    def test_four_rows(self, tmp_path):
        path = write(
            tmp_path,
            "patient_id,treated,proc,chf,er,death\n"
            "p1,1,hip,0,1,0\np2,1,hip,1,0,1\np3,0,hip,0,1,0\np4,0,knee,0,0,0\n",
        )
        recs = load_patients(path, SCHEMA)
        assert len(recs) == 4
        assert sum(r.treated for r in recs) == 2
        assert recs[1].refinement_key == {"chf": 1, "er": 0}
        assert recs[1].outcomes == {"death": 1}

    def test_duplicate_id(self, tmp_path):
        path = write(tmp_path, "patient_id,treated,proc,chf,er,death\np1,1,a,0,0,0\np1,0,a,0,0,0\n")
        with pytest.raises(InputError, match="p1"):
            load_patients(path, SCHEMA)

    def test_non_binary_outcome_reports_line(self, tmp_path):
        path = write(tmp_path, "patient_id,treated,proc,chf,er,death\np1,1,a,0,0,0\np2,0,a,0,0,2\n")
        with pytest.raises(InputError, match=":3:"):
            load_patients(path, SCHEMA)

    def test_missing_column_named(self, tmp_path):
        path = write(tmp_path, "patient_id,treated,proc,chf,death\np1,1,a,0,0\n")
        with pytest.raises(InputError, match="er"):
            load_patients(path, SCHEMA)

    def test_empty_cell_rejected(self, tmp_path):
        path = write(tmp_path, "patient_id,treated,proc,chf,er,death\np1,1,a,,0,0\n")
        with pytest.raises(InputError, match="chf"):
            load_patients(path, SCHEMA)


def patient(pid, treated, stratum="s", fine=0, coarse=0, y=0):
    return PatientRecord(pid, treated, {"stratum": stratum}, {"fine": fine, "coarse": coarse}, {"y": y})


class TestRepairExact:
    def test_min_count(self):
        ps = [patient(f"t{i}", 1) for i in range(3)] + [patient(f"c{i}", 0) for i in range(2)]
        pairs, unpaired, report = repair_exact(ps, ["fine"])
        assert len(pairs) == 2 and len(unpaired) == 1
        assert unpaired[0].patient_id == "t2"
        assert report.fine_pairs == 2 and report.coarse_pairs == 0

    def test_coarse_fallback(self):
        ps = [patient("t1", 1, fine=0), patient("t2", 1, fine=0), patient("c1", 0, fine=1), patient("c2", 0, fine=1)]
        pairs, unpaired, report = repair_exact(ps, ["fine", "coarse"], ["coarse"])
        assert (report.fine_pairs, report.coarse_pairs, report.unpaired) == (0, 2, 0)
        assert all(p.shared_covariates["fine"] is None for p in pairs)
        assert all(p.shared_covariates["coarse"] == "0" for p in pairs)

    def test_ascending_input_order(self):
        ps = [patient("c1", 0), patient("t1", 1), patient("c2", 0), patient("t2", 1)]
        pairs, _, _ = repair_exact(ps, ["fine"])
        assert [p.pair_id for p in pairs] == ["P000001", "P000002"]

    def test_unknown_key(self):
        with pytest.raises(InputError, match="nope"):
            repair_exact([patient("t", 1)], ["nope"])

    def test_empty_input(self):
        pairs, unpaired, report = repair_exact([], ["fine"])
        assert pairs == [] and unpaired == [] and report.total_pairs == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_counting_oracle(self, seed):
        rng = random.Random(seed)
        ps = [
            patient(
                f"p{i}",
                rng.randint(0, 1),
                stratum=f"s{rng.randrange(10)}",
                fine=rng.randint(0, 2),
                coarse=rng.randint(0, 1),
            )
            for i in range(600)
        ]
        pairs, unpaired, report = repair_exact(ps, ["fine", "coarse"], ["coarse"])

        cells = Counter((p.stratum_key["stratum"], p.refinement_key["fine"], p.refinement_key["coarse"], p.treated) for p in ps)
        keys = {k[:3] for k in cells}
        expected_fine = sum(min(cells[k + (1,)], cells[k + (0,)]) for k in keys)
        assert report.fine_pairs == expected_fine
        assert 2 * report.total_pairs + report.unpaired == len(ps)
        # after phase 2 no coarse cell may hold both a treated and a control leftover
        left = Counter((p.stratum_key["stratum"], p.refinement_key["coarse"], p.treated) for p in unpaired)
        assert not any(left[(s, c, 1)] and left[(s, c, 0)] for s, c, _ in left)
        ids = [p.pair_id for p in pairs]
        assert len(ids) == len(set(ids))


class TestPairFiles:
    def test_toy_fixture_byte_identical(self, tmp_path):
        schema = PatientSchema(stratum=("proc",), refinement=("chf", "er"), outcomes=("death", "icu"))
        pairs, unpaired, report = repair_exact(load_patients(DATA / "toy_patients.csv", schema), ["chf", "er"], ["chf"])
        out = tmp_path / "pairs.csv"
        write_pairs(out, pairs, ["proc", "chf", "er"], ["death", "icu"])
        assert out.read_bytes() == (DATA / "toy_pairs_expected.csv").read_bytes()
        assert [p.patient_id for p in unpaired] == ["a7", "a8"]
        assert (report.fine_pairs, report.coarse_pairs) == (2, 1)

    def test_round_trip(self, tmp_path):
        pairs = [
            PairRecord("x1", {"g": "1", "k": None}, {"y": (1, 0)}),
            PairRecord("x2", {"g": "2", "k": "a"}, {"y": (0, 0)}),
        ]
        path = tmp_path / "p.csv"
        write_pairs(path, pairs)
        back, covs, outs = load_pairs(path)
        assert back == pairs and covs == ["g", "k"] and outs == ["y"]


def hand_pairs():
    # (y_treated, y_control): 2 control-only, 1 treated-only, 1 both, 2 neither
    rows = [(0, 1), (1, 0), (0, 1), (1, 1), (0, 0), (0, 0)]
    return [PairRecord(f"h{i}", {"g": "a"}, {"y": r}) for i, r in enumerate(rows)]


class TestSummarize:
    def test_hand_enumeration(self):
        pairs = hand_pairs()
        (s,), pooled = summarize(pairs, Partition.single(pairs), "y")
        assert (s.n_pairs, s.n_discordant, s.n_control_only, s.n_treated_only) == (6, 3, 2, 1)
        assert (s.n_events_treated, s.n_events_control, s.n_both_events) == (2, 3, 1)
        assert pooled.n_discordant == 3

    def test_all_concordant(self):
        pairs = [PairRecord(f"c{i}", {}, {"y": (v, v)}) for i, v in enumerate([0, 1, 0])]
        (s,), _ = summarize(pairs, Partition.single(pairs), "y")
        assert (s.n_discordant, s.n_control_only) == (0, 0)

    def test_missing_outcome(self):
        pairs = hand_pairs()
        with pytest.raises(InputError, match="z"):
            summarize(pairs, Partition.single(pairs), "z")

    def test_group2_reconstruction(self):
        pairs = datasets.magnet_pairs()
        part = Partition.from_column(pairs, "group")
        groups, pooled = summarize(pairs, part, "death")
        g2 = groups[1]
        assert (g2.n_pairs, g2.n_discordant, g2.n_control_only) == (5636, 293, 177)
        assert round(100 * g2.event_rate_treated, 1) == 2.5
        assert round(100 * g2.event_rate_control, 1) == 3.5
        assert sum(g.n_pairs for g in groups) == pooled.n_pairs == 23715
        assert sum(g.n_discordant for g in groups) == pooled.n_discordant
        assert sum(g.n_control_only for g in groups) == pooled.n_control_only

    def test_partition_validation(self):
        with pytest.raises(InputError, match="empty"):
            Partition((1, 2), {"a": 1}, "user")

    def test_summary_invariants(self):
        with pytest.raises(InputError):
            DiscordantSummary.from_counts(1, 10, 3, 4)


class TestCrosstab:
    def test_group2_crosstab(self):
        pairs = [p for p in datasets.magnet_pairs() if p.shared_covariates["group"] == "2"]
        tab = crosstab(pairs, datasets.COMPOSITE_AXIS)
        np.testing.assert_array_equal(tab.counts, datasets.GROUP2_CROSSTAB)
        assert tuple(tab.row_totals) == (200, 2297, 3139)
        assert tuple(tab.col_totals) == (139, 1542, 3955)
        assert tab.total == 5636
        assert tab.discordance(["Dead"]) == (293, 177)

    def test_single_pair(self):
        pair = PairRecord("d", {}, {"death": (1, 1), "icu": (0, 0)})
        tab = crosstab([pair], datasets.COMPOSITE_AXIS)
        assert tab.counts[0, 0] == 1 and tab.total == 1

    def test_order_invariant(self):
        pairs = [p for p in datasets.magnet_pairs() if p.shared_covariates["group"] == "2"]
        shuffled = pairs[:]
        random.Random(3).shuffle(shuffled)
        a = crosstab(pairs, datasets.COMPOSITE_AXIS).counts
        b = crosstab(shuffled, datasets.COMPOSITE_AXIS).counts
        np.testing.assert_array_equal(a, b)

    def test_uncategorised_member(self):
        pair = PairRecord("x", {}, {"death": (0, 0), "icu": (0, 1)})
        with pytest.raises(InputError):
            crosstab([pair], [("Dead", {"death": 1}), ("Alive, ICU", {"death": 0, "icu": 1})])
