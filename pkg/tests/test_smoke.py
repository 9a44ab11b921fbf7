import synthetic
import syntax_tree
from config import ModelConfig
from inference_eval import hypothesis_text, translate_sentence
from model import build_model
from subword import build_vocab


def test_build_and_translate():
    pairs = synthetic.copy_corpus(4, vocab_size=5, seed=2)
    vocab = build_vocab([p.src for p in pairs], 50)
    assert 4 < len(vocab) <= 4 + 5, 'Vocabulary should hold the reserved tokens and the words seen'

    model = build_model(ModelConfig(d_emb=6, d_hidden=8), vocab, vocab, seed=1)
    pair = pairs[0]
    tree = syntax_tree.binarize(pair.tree)
    hyp = translate_sentence(model, vocab.encode(pair.src), tree, beam=2, max_len=5)
    assert len(hyp.tokens) <= 5, 'Decoding should stop at max_len'
    # untrained output is arbitrary, but it must decode to vocabulary words
    text = hypothesis_text(hyp, vocab)
    assert all(tok in vocab for tok in text.split())


if __name__ == '__main__':
    test_build_and_translate()
    print('Smoke tests passed')
