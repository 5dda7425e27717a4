"""Smoke test for the shlm Python bindings."""

import math

import shlm


def main():
    assert shlm.spearman([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8

    _, _, reduction = shlm.flops("opt-1.3b")
    assert abs(100 * reduction - 19.11) < 0.01, reduction

    model = shlm.Model.init("tiny", seed=1)
    tokens = shlm.synthetic_tokens(0, 4000)
    examples = [tokens[i * 40 : i * 40 + 32] for i in range(4)]

    scores = model.scores("plainact", examples)
    assert len(scores) == 1 and len(scores[0]) == model.num_units()
    per_example = model.scores("gradnorm", examples, contextual=True)
    assert len(per_example) == len(examples)

    keep = model.mask(scores[0], "global", 0.5)
    assert sum(not k for k in keep) == model.num_units() // 2

    dense = model.perplexity(tokens[:1000], window_len=64)
    pruned = model.perplexity(tokens[:1000], window_len=64, scores=scores[0], sparsity=0.5)
    assert math.isfinite(dense) and math.isfinite(pruned)

    try:
        model.scores("jacov", examples, contextual=True)
    except ValueError as e:
        assert "aggregate-only" in str(e)
    else:
        raise AssertionError("jacov accepted in contextual mode")

    print(f"ok: dense ppl {dense:.2f}, 50% global ppl {pruned:.2f}")


if __name__ == "__main__":
    main()
