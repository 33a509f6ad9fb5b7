import marimo

__generated_with = "0.13.10"
app = marimo.App()


@app.cell
def _():
    import marimo as mo
    import polars as pl
    import matplotlib.pyplot as plt
    import numpy as np
    from edgecalc.operators import assemble_hodge_derham, assemble_hodge_laplace, fuchs_model
    from edgecalc.symbols import Window, admissible_weights, indicial_roots, report_to_frame
    return (
        Window,
        admissible_weights,
        assemble_hodge_derham,
        assemble_hodge_laplace,
        fuchs_model,
        indicial_roots,
        mo,
        np,
        pl,
        plt,
        report_to_frame,
    )


@app.cell
def _(mo):
    band_limit = mo.ui.slider(1, 12, value=6, label="band limit")
    gamma_lo = mo.ui.number(-2.0, 6.0, value=-1.0, step=0.5, label="gamma from")
    gamma_hi = mo.ui.number(-2.0, 6.0, value=4.0, step=0.5, label="gamma to")
    mo.hstack([band_limit, gamma_lo, gamma_hi])
    return band_limit, gamma_hi, gamma_lo


@app.cell
def _(assemble_hodge_derham, assemble_hodge_laplace, fuchs_model):
    operators = {
        "d + d*": assemble_hodge_derham(None),
        "Laplace on 1-forms": assemble_hodge_laplace(1),
        "r^-2 (theta^2 - Delta_X)": fuchs_model([0.0, 0.0, 1.0], laplace_shift=1.0),
    }
    return (operators,)


@app.cell
def _(Window, band_limit, indicial_roots, operators, pl, report_to_frame):
    frames = []
    for name, P in operators.items():
        report = indicial_roots(P, Window(-15.0, 15.0), band_limit.value)
        frames.append(report_to_frame(report).with_columns(pl.lit(name).alias("operator")))
    roots = pl.concat(frames)
    roots
    return (roots,)


@app.cell
def _(np, plt):
    def draw_roots(roots, gamma_window, m=1):
        # Lambda per mode, with the weight lines Re z = (m+1)/2 - gamma of the window edges
        fig, ax = plt.subplots()
        for name in roots["operator"].unique(maintain_order=True).to_list():
            part = roots.filter(roots["operator"] == name)
            sizes = 20 * np.asarray(part["multiplicity"].to_list())
            ax.scatter(part["re_z"], part["mode_k"], s=sizes, label=name, alpha=0.6)
        for gamma in gamma_window:
            ax.axvline((m + 1) / 2 - gamma, color="grey", linestyle="--")
        ax.set_xlabel("Re z")
        ax.set_ylabel("mode k")
        ax.set_title("Indicial roots")
        ax.legend()
        ax.grid(True)
        return fig
    return (draw_roots,)


@app.cell
def _(draw_roots, gamma_hi, gamma_lo, roots):
    draw_roots(roots, (gamma_lo.value, gamma_hi.value))
    return


@app.cell
def _(admissible_weights, band_limit, gamma_hi, gamma_lo, operators, pl):
    rows = []
    for _name, _P in operators.items():
        _report = admissible_weights(_P, (gamma_lo.value, gamma_hi.value), band_limit.value)
        for a, b in _report.admissible:
            rows.append({"operator": _name, "gamma_from": a, "gamma_to": b})
    pl.DataFrame(rows)
    return


if __name__ == "__main__":
    app.run()
