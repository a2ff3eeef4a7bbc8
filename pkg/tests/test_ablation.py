import csv

import pytest

from moxgate import ablation as A
from moxgate.model import ConfigError
from moxgate.synthetic import SyntheticSpec, generate_synthetic
from moxgate.training import TrainConfig

TINY = dict(embed_dim=32, encoder_heads=2, cross_heads=8, token_count=4, classifier_hidden_dim=8)


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(SyntheticSpec(samples_per_class=10, num_classes=3, modality_dims=[4, 4, 4]))


def base():
    return TrainConfig(batch_size=32, max_epochs=1, patience=1, model=dict(TINY))


class TestSubsets:
    def test_seven_subsets_in_order(self):
        s = A.modality_subsets(["gene", "methylation", "mirna"])
        assert len(s) == 7
        assert s[:3] == [("gene",), ("methylation",), ("mirna",)]
        assert s[-1] == ("gene", "methylation", "mirna")

    def test_labels(self):
        names = ["gene", "methylation", "mirna"]
        assert A.subset_label(names, names) == "All (Combined)"
        assert A.subset_label(["gene", "mirna"], names) == "Gene + miRNA"
        assert A.subset_label(["methylation"], names) == "Methylation"


class TestRunAblation:
    def test_modality_rows(self, data):
        rows = A.run_ablation(data, base(), A.AblationSpec("modality_subsets"))
        assert [r.label for r in rows] == ["Gene", "Methylation", "miRNA", "Gene + Methylation", "Gene + miRNA",
                                           "Methylation + miRNA", "All (Combined)"]

    def test_head_rows(self, data):
        rows = A.run_ablation(data, base(), A.AblationSpec("cross_heads"))
        assert [r.label for r in rows] == ["8", "16", "32"]

    def test_component_rows(self, data):
        rows = A.run_ablation(data, base(), A.AblationSpec("components"))
        assert [r.label for r in rows] == ["w/ BatchNorm", "w/ Skip Connection", "w/ Feedforward Attention",
                                           "w/ Skip + Feedforward Attn"]

    def test_fusion_rows_and_seeds(self, data):
        rows = A.run_ablation(data, base(), A.AblationSpec("fusion_mode", seeds=[0, 1]))
        assert [r.label for r in rows] == ["Concatenation", "Cross-Attention"]
        assert all(len(r.reports) == 2 for r in rows)

    def test_invalid_head_count_fails_before_training(self, data):
        with pytest.raises(ConfigError):
            A.run_ablation(data, base(), A.AblationSpec("cross_heads", values=[8, 7]))

    @pytest.mark.parametrize("kw", [{"axis": "depth"}, {"axis": "cross_heads", "values": []},
                                    {"axis": "cross_heads", "seeds": []}])
    def test_bad_spec(self, kw):
        with pytest.raises(ConfigError):
            A.AblationSpec(**kw)


class TestOutput:
    def test_csv_and_table(self, data, tmp_path):
        rows = A.run_ablation(data, base(), A.AblationSpec("cross_heads", values=[8, 16]))
        A.write_csv(rows, tmp_path / "a.csv")
        with open(tmp_path / "a.csv", newline="") as fh:
            got = list(csv.DictReader(fh))
        assert [g["row"] for g in got] == ["8", "16"]
        assert float(got[0]["accuracy"]) == pytest.approx(rows[0].mean()["accuracy"], abs=5e-5)
        table = A.format_table(rows).splitlines()
        assert table[0].split() == ["Heads", "Accuracy", "Precision", "Recall", "F1-Score"]
        assert len(table) == 3
