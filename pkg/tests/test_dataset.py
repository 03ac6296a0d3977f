import unittest

import numpy as np

from context import hedvol, HedvolTestCase

from hedvol.dataset import (CodingPlan, Dataset, DataLoadError, HoldoutError, load_covariate_rows,
                            load_csv, save_csv, split_holdout)


class TestDataset(HedvolTestCase):
    HEADER = ["time", "price", "x1"]

    def _basic_csv(self):
        rows = [
            ("1998-2", 100, 1.5),
            ("1998-10", 1000, 2.5),
            ("1998-2", 10, 0.5),
            ("1998-1", 10000, -1.0),
        ]
        return self._write_csv("basic.csv", self.HEADER, rows)

    def test_load_csv__groups_and_log10(self):
        d = load_csv(self._basic_csv(), CodingPlan.numeric(["x1"]))

        self.assertEqual(("1998-1", "1998-2", "1998-10"), d.times)
        self.assertEqual([1, 2, 1], list(d.group_sizes))
        self.assertEqual(4, d.n_total)
        self.assertEqual(1, d.k)

        # File order kept within a period
        y, X = d.group(1)
        self.assertAllClose([2.0, 1.0], y)
        self.assertAllClose([[1.5], [0.5]], X)

    def test_load_csv__no_log(self):
        d = load_csv(self._basic_csv(), CodingPlan.numeric(["x1"]), log_transform=False)
        self.assertAllClose([10000.0], d.group(0)[0])

    def test_load_csv__missing_column(self):
        path = self._write_csv("bad.csv", ["time", "price"], [("1", 10), ("2", 20)])
        self.assertRaises(DataLoadError, lambda: load_csv(path, CodingPlan.numeric(["x1"])))

    def test_load_csv__nonpositive_price(self):
        path = self._write_csv("bad.csv", self.HEADER, [("1", 10, 0), ("2", -5, 1)])
        with self.assertRaises(DataLoadError) as cm:
            load_csv(path, CodingPlan.numeric(["x1"]))
        self.assertIn("line 3", str(cm.exception))

    def test_load_csv__non_numeric(self):
        path = self._write_csv("bad.csv", self.HEADER, [("1", 10, "big"), ("2", 5, 1)])
        with self.assertRaises(DataLoadError) as cm:
            load_csv(path, CodingPlan.numeric(["x1"]))
        self.assertIn("line 2", str(cm.exception))
        self.assertIn("x1", str(cm.exception))

    def test_load_csv__blank_value(self):
        path = self._write_csv("bad.csv", self.HEADER, [("1", 10, 1), ("2", "", 1)])
        self.assertRaises(DataLoadError, lambda: load_csv(path, CodingPlan.numeric(["x1"])))

    def test_load_csv__empty(self):
        path = self._path("empty.csv")
        with open(path, "w+") as f:
            f.write("")
        self.assertRaises(DataLoadError, lambda: load_csv(path, CodingPlan.numeric([])))

        path = self._write_csv("header_only.csv", self.HEADER, [])
        self.assertRaises(DataLoadError, lambda: load_csv(path, CodingPlan.numeric(["x1"])))

    def test_load_csv__min_periods(self):
        path = self._write_csv("one.csv", self.HEADER, [("1", 10, 1), ("1", 20, 2)])
        self.assertRaises(DataLoadError, lambda: load_csv(path, CodingPlan.numeric(["x1"])))

        d = load_csv(path, CodingPlan.numeric(["x1"]), min_periods=1)
        self.assertEqual(1, d.T)

    def test_coding_plan__categorical(self):
        rows = [("1", 10, "flat"), ("1", 20, "house"), ("2", 30, "villa"), ("2", 40, "flat")]
        path = self._write_csv("cat.csv", ["time", "price", "kind"], rows)

        frame = hedvol.dataset.read_frame(path, ["kind"])[0]
        plan = CodingPlan.from_frame(frame, categorical=["kind"])
        self.assertEqual(["kind[house]", "kind[villa]"], plan.column_names)

        d = load_csv(path, plan)
        self.assertAllClose([[0, 0], [1, 0]], d.group(0)[1])
        self.assertAllClose([[0, 1], [0, 0]], d.group(1)[1])

        plan = CodingPlan.from_frame(frame, categorical=["kind"], baselines={"kind": "villa"})
        self.assertEqual(["kind[flat]", "kind[house]"], plan.column_names)

    def test_coding_plan__unknown_category(self):
        plan = CodingPlan([{"name": "kind", "kind": "categorical", "categories": ["a", "b"]}])
        path = self._write_csv("new.csv", ["kind"], [("a",), ("c",)])
        with self.assertRaises(DataLoadError) as cm:
            load_covariate_rows(path, plan)
        self.assertIn("line 3", str(cm.exception))

    def test_coding_plan__bad_kind(self):
        self.assertRaises(ValueError, lambda: CodingPlan([{"name": "a", "kind": "ordinal"}]))
        self.assertRaises(ValueError, lambda: CodingPlan(
            [{"name": "a", "kind": "categorical", "categories": ["x"], "baseline": "y"}]))

    def test_load_covariate_rows(self):
        path = self._write_csv("rows.csv", ["x1"], [(1.0,), (2.0,)])
        times, X, y = load_covariate_rows(path, CodingPlan.numeric(["x1"]))
        self.assertIsNone(times)
        self.assertIsNone(y)
        self.assertAllClose([[1.0], [2.0]], X)

        path = self._write_csv("rows2.csv", self.HEADER, [("3", 100, 1.0)])
        times, X, y = load_covariate_rows(path, CodingPlan.numeric(["x1"]))
        self.assertEqual(["3"], list(times))
        self.assertAllClose([2.0], y)

    def test_save_csv__reload_identical(self):
        rng = np.random.default_rng(7)
        d = Dataset(["a", "b", "c"], [rng.standard_normal(n) for n in (3, 1, 4)],
                    [rng.standard_normal((n, 2)) / 3 for n in (3, 1, 4)], ["x1", "x2"])
        path = self._path("saved.csv")
        save_csv(d, path)

        d2 = load_csv(path, CodingPlan.numeric(d.covariate_names), response_col="response",
                      log_transform=False)
        self.assertEqual(d, d2)

    def test_dataset__readonly(self):
        d = self._dataset([[1.0, 2.0], [3.0]])
        y, _ = d.group(0)
        with self.assertRaises(ValueError):
            y[0] = 5.0

    def test_dataset__bad_input(self):
        self.assertRaises(ValueError, lambda: self._dataset([[1.0], []]))
        self.assertRaises(ValueError, lambda: self._dataset([[1.0], [np.nan]]))
        self.assertRaises(ValueError, lambda: Dataset(["1", "1"], [[1.0], [2.0]],
                                                      [np.zeros((1, 0))] * 2, []))

    def test_residual_stats(self):
        d = self._dataset([[1.0, 3.0], [2.0]])
        n, mean, ss = d.residual_stats(1.0, [])
        self.assertEqual([2, 1], list(n))
        self.assertAllClose([1.0, 1.0], mean)
        self.assertAllClose([2.0, 0.0], ss)

    def test_index_of(self):
        d = self._dataset([[1.0], [2.0]])
        self.assertEqual(1, d.index_of("2"))
        self.assertRaises(KeyError, lambda: d.index_of("3"))

    def test_split_holdout__last_period(self):
        d = self._dataset([[1.0], [2.0, 3.0], [4.0, 5.0, 6.0]])
        train, test = split_holdout(d, "last_period")
        self.assertEqual(("1", "2"), train.times)
        self.assertEqual(("3",), test.times)
        self.assertEqual(3, test.n_total)

        self.assertRaises(HoldoutError, lambda: split_holdout(self._dataset([[1.0], [2.0]])))

    def test_split_holdout__random_rows(self):
        d = self._dataset([[1.0, 2.0], [3.0, 4.0, 5.0], [6.0]])
        train, test = split_holdout(d, "random_rows", 3, seed=5)
        self.assertEqual(3, train.T)
        self.assertEqual(3, train.n_total)
        self.assertEqual(3, test.n_total)
        self.assertTrue(all(n >= 1 for n in train.group_sizes))

        pooled = np.sort(np.concatenate(train.responses + test.responses))
        self.assertAllClose([1, 2, 3, 4, 5, 6], pooled)

        again = split_holdout(d, "random_rows", 3, seed=5)
        self.assertEqual(train, again[0])
        self.assertEqual(test, again[1])

    def test_split_holdout__random_rows_zero(self):
        d = self._dataset([[1.0, 2.0], [3.0]])
        train, test = split_holdout(d, "random_rows", 0, seed=1)
        self.assertEqual(d, train)
        self.assertEqual(0, test.T)

    def test_split_holdout__too_many(self):
        d = self._dataset([[1.0, 2.0], [3.0]])
        self.assertRaises(HoldoutError, lambda: split_holdout(d, "random_rows", 2, seed=1))
        self.assertRaises(HoldoutError, lambda: split_holdout(d, "sideways"))


if __name__ == '__main__':
    unittest.main()
