import numpy as np
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def objective_gradient_error(config, seed, batch=4, length=12):
    """Relative L2 error between tape and central-difference gradients of the
    full training objective at a random parameter point."""
    from intense.synthdata import SynthGeneConfig, generate_synthgene
    from intense.tensor import Tape, backward
    from intense.training import MultimodalModel, objective

    n_mod = max(m for s in config.interaction_sets for m in s)
    data = generate_synthgene(SynthGeneConfig((0.5,) * n_mod, n_samples=batch, seed=seed,
                                              length=length))
    model = MultimodalModel.from_config(config, n_mod)
    rng = np.random.default_rng([seed, 99])
    params = model.parameters()
    for p in params.values():
        p.data = np.array(p.data + rng.normal(scale=0.3, size=np.shape(p.data)))

    def value():
        return float(objective(model, data.codes, data.labels, config).data)

    with Tape() as tape:
        loss = objective(model, data.codes, data.labels, config)
    grads = backward(tape, loss)
    analytic = np.concatenate([grads[p].ravel() for p in params.values()])
    numeric = np.concatenate([numeric_grad(value, p.data, h=1e-5).ravel()
                              for p in params.values()])
    return float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
