from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from cardioagent.errors import EmptyInput
from cardioagent.tools.labs import lab_process, parse_narrative

REPORT = """\
Age: 72
Sex: female
BNP: 1250 pg/mL
NT-proBNP = 4300 pg/mL
Troponin T | 0.02 | ng/mL
Creatinine,1.4,mg/dL
see attached discharge letter
"""


class TestLabProcess:
    def test_fields_and_units(self):
        r = lab_process(REPORT)
        assert r.parsed["age"].value == 72.0 and r.parsed["age"].unit == "years"
        assert r.parsed["sex"].value == "female"
        assert r.numeric()["bnp"] == (1250.0, "pg/mL")
        assert r.numeric()["nt_probnp"] == (4300.0, "pg/mL")
        assert r.numeric()["troponin_t"] == (0.02, "ng/mL")
        assert r.numeric()["creatinine"] == (1.4, "mg/dL")
        assert r.unparsed == ["see attached discharge letter"]

    def test_narrative_and_tokens(self):
        r = lab_process("BNP: 1250 pg/mL\nAge: 72")
        assert r.narrative == "BNP is 1250 pg/mL.\nAge is 72 years."
        assert r.tokens[:4] == ["bnp", "is", "1250", "pg"]

    @pytest.mark.parametrize("raw", ["", "   \n  ", None])
    def test_empty(self, raw):
        with pytest.raises(EmptyInput):
            lab_process(raw)

    def test_round_trip_example(self):
        r = lab_process(REPORT)
        assert parse_narrative(r.narrative) == r.numeric()

    @settings(max_examples=100, deadline=None)
    @given(
        st.dictionaries(
            st.sampled_from(["BNP", "Troponin", "Sodium", "Potassium", "LVEF", "Hemoglobin"]),
            st.tuples(
                st.one_of(st.integers(0, 100000).map(float), st.floats(0.001, 1e5, allow_nan=False).map(lambda x: round(x, 3))),
                st.sampled_from(["pg/mL", "mmol/L", "%", "g/dL"]),
            ),
            min_size=1,
        )
    )
    def test_round_trip_property(self, values):
        raw = "\n".join(f"{k}: {v} {u}" for k, (v, u) in values.items())
        r = lab_process(raw)
        back = parse_narrative(r.narrative)
        assert back == r.numeric()
        assert {k.lower(): v for k, v in values.items()} == back
