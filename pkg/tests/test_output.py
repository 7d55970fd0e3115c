import json
import math
import numpy as np
import tempfile
import unittest
from datetime import datetime, timezone
from pathlib import Path
from reboot.decay.errors import ConfigError
from reboot.decay.estimator import DecayEstimate
from reboot.decay.output import (
    dumps,
    format_float,
    metadata_path,
    read_csv_column,
    write_csv,
    write_h_curve,
    write_metadata,
    write_table,
)


class TestJson(unittest.TestCase):

    def test_floats(self) -> None:
        self.assertEqual(format_float(0.1), "0.10000000000000001")
        self.assertEqual(format_float(1.0), "1")
        value = json.loads(
            dumps({"x": 1 / 3, "inf": math.inf, "nan": math.nan})
        )
        self.assertEqual(value["x"], 1 / 3)
        self.assertEqual(value["inf"], "inf")
        self.assertEqual(value["nan"], "nan")
        self.assertEqual(json.loads(dumps(-math.inf)), "-inf")

    def test_dataclasses_and_arrays(self) -> None:
        estimate = DecayEstimate(
            rate=0.5,
            stderr=0.01,
            window=(1.0, 2.0),
            points=100,
            r_squared=0.99,
        )
        value = json.loads(
            dumps({"estimate": estimate, "samples": np.array([1.0, 2.0])})
        )
        self.assertEqual(value["estimate"]["rate"], 0.5)
        self.assertEqual(value["estimate"]["window"], [1.0, 2.0])
        self.assertEqual(value["samples"], [1.0, 2.0])

    def test_numeric_lists_inline(self) -> None:
        self.assertEqual(dumps({"a": [1, 2.5]}), '{\n  "a": [1, 2.5]\n}\n')

    def test_unencodable(self) -> None:
        with self.assertRaises(TypeError):
            dumps(object())


class TestFiles(unittest.TestCase):

    def test_csv_round_trip_is_exact(self) -> None:
        samples = np.random.default_rng(1).exponential(1.0, 1_000)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "nested" / "samples.csv"
            write_csv(path, {"service_time": samples / 2, "sojourn": samples})
            np.testing.assert_array_equal(read_csv_column(path), samples)
            np.testing.assert_array_equal(
                read_csv_column(path, "service_time"),
                samples / 2,
            )
            with self.assertRaises(ConfigError):
                read_csv_column(path, "length")

    def test_default_column(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "lengths.csv"
            write_csv(path, {"index": np.arange(3.0), "length": np.ones(3)})
            np.testing.assert_array_equal(read_csv_column(path), np.ones(3))

            path = Path(directory) / "other.csv"
            write_csv(path, {"a": np.zeros(2), "b": np.ones(2)})
            np.testing.assert_array_equal(read_csv_column(path), np.ones(2))

    def test_table(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "compare.csv"
            write_table(
                path,
                ["discipline", "analytic"],
                [["ps", None], ["fifo", 0.5]],
            )
            self.assertEqual(
                path.read_text(),
                "discipline,analytic\nps,\nfifo,0.5\n",
            )

    def test_h_curve(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "h.dat"
            write_h_curve(
                path,
                [(0.0, 0.0), (0.5, 0.25), (2.0, -math.inf)],
                {"c_fb": 0.25, "drB": math.inf},
            )
            self.assertEqual(
                path.read_text(),
                "# theta h\n0 0\n0.5 0.25\n\n\n# marker theta\n"
                "c_fb 0.25\ndrB inf\n",
            )

    def test_metadata_sidecar(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "result.json"
            sidecar = write_metadata(
                path,
                command="analytic",
                config={"lambda": 0.5},
                started=datetime(2025, 1, 1, tzinfo=timezone.utc),
            )
            self.assertEqual(sidecar, metadata_path(path))
            self.assertEqual(sidecar.name, "result.json.meta.json")
            metadata = json.loads(sidecar.read_text())
            self.assertEqual(metadata["command"], "analytic")
            self.assertEqual(metadata["config"], {"lambda": 0.5})
            self.assertEqual(len(metadata["run_id"]), 36)
            self.assertFalse(path.exists())


if __name__ == '__main__':
    unittest.main()
