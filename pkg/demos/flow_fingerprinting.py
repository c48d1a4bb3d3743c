"""Telling human-paced flows from machine cadence with five timing features.

No payload is read: only packet times and the connection tuple.
"""

from poh.classifier import classify, evaluate, train_anomaly_model
from poh.flows import BotParams, HumanParams, compute_features, corpus_features, generate_corpus, generate_trace


def show(name: str, features) -> None:
    print(f"  {name:<16} var={features.iat_variance:14.0f} us^2  entropy={features.iat_entropy:.3f} bits  "
          f"bursts/s={features.burst_density:.3f}  lifetime={features.flow_lifetime:7.1f} s")


def main() -> None:
    print("one flow of each kind:")
    show("human browsing", compute_features(generate_trace("human", HumanParams(n_packets=400), seed=1)))
    show("bot heartbeat", compute_features(generate_trace("bot", BotParams(period_ms=50, n_packets=400), seed=1)))
    show("bot bursts", compute_features(generate_trace("bot", BotParams(mode="burst", n_packets=400), seed=1)))

    train = generate_corpus(500, 500, seed=1)
    test = generate_corpus(500, 500, seed=2)
    model = train_anomaly_model(corpus_features(train), [c.label for c in train], seed=0)
    print(f"\nisolation forest {model.model_id} trained on the human rows of {len(train)} flows")

    result = evaluate(model, corpus_features(test), [c.label for c in test])
    print(f"held-out AUC over {len(test)} flows: {result.auc:.4f}")
    for truth, row in result.confusion.items():
        print(f"  {truth:<6} -> " + ", ".join(f"{label} {n}" for label, n in row.items()))

    probe = compute_features(generate_trace("bot", BotParams(period_ms=200, n_packets=300), seed=9))
    score = classify(probe, model)
    print(f"\nnew 200 ms heartbeat flow: human likelihood {score.score:.3f} -> {score.label.value}")


if __name__ == "__main__":
    main()
