import math

import numpy as np

from reports import format_table, format_value


class TestFormatValue:
    def test_numbers(self):
        assert format_value(0.1070142) == "0.107014"
        assert format_value(np.float64(2.0) / 3.0) == "0.666667"
        assert format_value(np.int64(12)) == "12"

    def test_text_and_missing(self):
        assert format_value("sparse_sm") == "sparse_sm"
        assert format_value(None) == "N/A"
        assert format_value(True) == "True"
        assert format_value(math.inf) == "inf"

    def test_table_mixes_text_and_numbers(self):
        table = format_table([("problem", "matching_sm"), ("chi2", 0.25)], "Report")
        assert table.splitlines() == ["Report", "------", "problem  matching_sm", "chi2     0.25"]
