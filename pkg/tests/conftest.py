import numpy as np
import pytest

from relex.candidates import RelationInstance
from relex.corpus import Document, Entity, RelationAnnotation
from relex.encoding import EncodedInstance, EncoderSettings, build_vocab
from relex.model import ModelConfig, init_model


def make_doc(doc_id, text, ents, rels=(), project_id=""):
    """ents: (ent_id, start, end, tui[, cui[, validated]]) tuples;
    rels: (left, right, label) tuples."""
    entities = []
    for spec in ents:
        ent_id, start, end, tui = spec[:4]
        cui = spec[4] if len(spec) > 4 else ""
        validated = spec[5] if len(spec) > 5 else True
        entities.append(Entity(ent_id=ent_id, start=start, end=end,
                               surface=text[start:end], cui=cui, tui=tui,
                               validated=validated))
    relations = tuple(RelationAnnotation(left_ent=l, right_ent=r, label=lab)
                      for l, r, lab in rels)
    return Document(doc_id=doc_id, text=text, entities=tuple(entities),
                    relations=relations, project_id=project_id)


def make_instance(doc, left_id, right_id, label):
    return RelationInstance(doc_id=doc.doc_id, left=doc.entity_by_id(left_id),
                            right=doc.entity_by_id(right_id), label=label,
                            project_id=doc.project_id)


@pytest.fixture
def tiny_model():
    """d_model=8, 1 layer, 1 head, 2 labels, float64, no dropout."""
    cfg = ModelConfig(vocab_size=24, n_labels=2, d_model=8, n_layers=1, n_heads=1,
                      d_ff=16, max_seq_len=32, dropout_rate=0.0, head_hidden=16)
    return init_model(cfg, ("neg", "pos"), "tiny-vocab-hash", seed=3,
                      dtype=np.float64, init_std=0.4)


def tiny_batch():
    def inst(ids, e1, e2, mk, y):
        return EncodedInstance(token_ids=tuple(ids), e1_span=e1, e2_span=e2,
                               marker_idx=mk, label_id=y, attention_len=len(ids))
    return [
        inst([2, 4, 9, 10, 5, 12, 6, 11, 7, 13], (2, 4), (7, 8), (1, 4, 6, 8), 0),
        inst([2, 4, 9, 5, 14, 6, 10, 7], (2, 3), (6, 7), (1, 3, 5, 7), 1),
        inst([2, 12, 4, 9, 5, 6, 11, 15, 7, 13, 16], (3, 4), (6, 8), (2, 4, 5, 9), 1),
    ]


@pytest.fixture
def small_vocab():
    return build_vocab(["aspirin causes rash daily with oral tablets and more words"],
                       max_size=64)


@pytest.fixture
def default_settings():
    return EncoderSettings()
