import numpy as np
import pytest

from tagclass.data import (SynthConfig, TagFormatError, TextAttributedGraph,
                           load_tag, save_tag, synth_tag, validate)


class TestValidate:
    def test_valid_fixture_has_no_violations(self, tiny_graph):
        assert validate(tiny_graph) == []

    def test_short_labels_named(self, tiny_graph):
        broken = TextAttributedGraph(3, tiny_graph.edges, tiny_graph.texts,
                                     [0, 0], tiny_graph.class_names)
        violations = validate(broken)
        assert len(violations) == 1 and "labels" in violations[0]

    def test_duplicate_unordered_pair_is_one_violation(self, tiny_graph):
        broken = TextAttributedGraph(3, [(1, 2), (2, 1)], tiny_graph.texts,
                                     tiny_graph.labels, tiny_graph.class_names)
        violations = validate(broken)
        assert len(violations) == 1
        assert "(1, 2)" in violations[0]

    def test_self_loop_flagged(self, tiny_graph):
        broken = TextAttributedGraph(3, [(1, 1)], tiny_graph.texts,
                                     tiny_graph.labels, tiny_graph.class_names)
        assert any("self-loop" in v for v in validate(broken))

    def test_label_out_of_range_flagged(self, tiny_graph):
        broken = TextAttributedGraph(3, [], tiny_graph.texts, [0, 0, 5],
                                     tiny_graph.class_names)
        assert any("labels[2]" in v for v in validate(broken))


class TestRoundTrip:
    def test_load_after_save_is_identity(self, tiny_graph, tmp_path):
        save_tag(tiny_graph, tmp_path / "ds")
        assert load_tag(tmp_path / "ds") == tiny_graph

    def test_two_saves_are_byte_identical(self, tiny_graph, tmp_path):
        save_tag(tiny_graph, tmp_path / "a")
        save_tag(tiny_graph, tmp_path / "b")
        for name in ("nodes.tsv", "edges.tsv", "classes.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_single_node_writes_empty_edge_file(self, tmp_path):
        g = TextAttributedGraph(1, [], ["solo"], [0], ["only"])
        save_tag(g, tmp_path / "ds")
        assert (tmp_path / "ds" / "nodes.tsv").read_text() == "0\t0\tsolo\n"
        assert (tmp_path / "ds" / "edges.tsv").read_text() == ""

    def test_invalid_graph_refused_and_nothing_written(self, tiny_graph, tmp_path):
        broken = TextAttributedGraph(3, [(1, 1)], tiny_graph.texts,
                                     tiny_graph.labels, tiny_graph.class_names)
        with pytest.raises(ValueError, match="self-loop"):
            save_tag(broken, tmp_path / "ds")
        assert not (tmp_path / "ds" / "nodes.tsv").exists()

    def test_synth_round_trips(self, tmp_path):
        g = synth_tag(SynthConfig(num_nodes=25, num_classes=3), seed=3)
        save_tag(g, tmp_path / "ds")
        assert load_tag(tmp_path / "ds") == g


class TestLoadErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_tag(tmp_path / "nowhere")

    def test_out_of_range_edge_names_the_edge(self, tiny_graph, tmp_path):
        save_tag(tiny_graph, tmp_path / "ds")
        (tmp_path / "ds" / "edges.tsv").write_text("0\t1\n0\t5\n")
        with pytest.raises(TagFormatError, match=r"record 1.*\(0, 5\)"):
            load_tag(tmp_path / "ds")

    def test_malformed_record_reports_index(self, tiny_graph, tmp_path):
        save_tag(tiny_graph, tmp_path / "ds")
        (tmp_path / "ds" / "nodes.tsv").write_text("0\t0\n")
        with pytest.raises(TagFormatError, match="record 0"):
            load_tag(tmp_path / "ds")

    def test_label_out_of_range_reports_index(self, tiny_graph, tmp_path):
        save_tag(tiny_graph, tmp_path / "ds")
        (tmp_path / "ds" / "nodes.tsv").write_text("0\t9\talpha\n")
        with pytest.raises(TagFormatError, match="record 0"):
            load_tag(tmp_path / "ds")


class TestSynth:
    def test_planted_partition_density_by_enumeration(self):
        config = SynthConfig(num_nodes=40, num_classes=2,
                             intra_edge_prob=0.2, inter_edge_prob=0.01)
        g = synth_tag(config, seed=7)
        labels = np.asarray(g.labels)
        intra = inter = 0
        for a, b in g.edges:
            if labels[a] == labels[b]:
                intra += 1
            else:
                inter += 1
        intra_pairs = sum(1 for i in range(40) for j in range(i + 1, 40)
                          if labels[i] == labels[j])
        inter_pairs = 40 * 39 // 2 - intra_pairs
        assert intra / intra_pairs > inter / inter_pairs

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_density_ordering_across_pinned_seeds(self, seed):
        g = synth_tag(SynthConfig(num_nodes=40, num_classes=2), seed=seed)
        labels = np.asarray(g.labels)
        intra = sum(1 for a, b in g.edges if labels[a] == labels[b])
        inter = len(g.edges) - intra
        assert intra > inter

    def test_zero_nodes_rejected(self):
        with pytest.raises(ValueError):
            synth_tag(SynthConfig(num_nodes=0), seed=0)

    def test_zero_classes_rejected(self):
        with pytest.raises(ValueError):
            synth_tag(SynthConfig(num_classes=0), seed=0)

    def test_bad_probability_names_key(self):
        with pytest.raises(ValueError, match="intra_edge_prob"):
            SynthConfig(intra_edge_prob=1.5).check()

    def test_deterministic_per_seed(self):
        config = SynthConfig(num_nodes=30, num_classes=3)
        assert synth_tag(config, seed=5) == synth_tag(config, seed=5)
        assert synth_tag(config, seed=5) != synth_tag(config, seed=6)

    def test_generated_graph_is_valid(self):
        g = synth_tag(SynthConfig(num_nodes=50, num_classes=4), seed=1)
        assert validate(g) == []

    def test_class_names_share_text_vocabulary(self):
        g = synth_tag(SynthConfig(num_nodes=10, num_classes=2), seed=0)
        name_tokens = set(g.class_names[0].split())
        text_tokens = set(tok for t in g.texts for tok in t.split())
        assert name_tokens & text_tokens


def test_constructor_normalizes_edge_orientation():
    g = TextAttributedGraph(3, [(2, 0)], ["a", "b", "c"], [0, 0, 0], ["x"])
    assert g.edges == ((0, 2),)
