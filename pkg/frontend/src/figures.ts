import { Table, requireColumns } from "./csv.js";
import { MARGIN, Scale, SvgCanvas, linearScale, logScale } from "./svg.js";

const TRIAL_COLOR = "#9ecae1";
const BOLD_COLOR = "#d62728";
const GENIE_COLOR = "#2ca02c";

function plotArea(svg: SvgCanvas) {
  return {
    x0: MARGIN.left, x1: svg.width - MARGIN.right,
    y0: svg.height - MARGIN.bottom, y1: MARGIN.top,
  };
}

function axes(svg: SvgCanvas, xLabel: string, yLabel: string, title: string) {
  const a = plotArea(svg);
  svg.line(a.x0, a.y0, a.x1, a.y0);
  svg.line(a.x0, a.y0, a.x0, a.y1);
  svg.text((a.x0 + a.x1) / 2, svg.height - 12, xLabel, 13, "middle");
  svg.text(16, (a.y0 + a.y1) / 2, yLabel, 13, "middle");
  svg.text((a.x0 + a.x1) / 2, 18, title, 14, "middle");
}

/** Monte Carlo MSE trajectories as thin lines, SE prediction as a bold
 * overlay, log-y. */
export function mseTraceFigure(table: Table, path: string): string {
  const cols = requireColumns(
    table, ["trial", "t", "mse_empirical", "mse_se_predicted"], path);
  const trial = cols.get("trial")!;
  const t = cols.get("t")!;
  const emp = cols.get("mse_empirical")!;
  const pred = cols.get("mse_se_predicted")!;

  const svg = new SvgCanvas();
  const a = plotArea(svg);
  const tMax = Math.max(...t);
  const all = emp.concat(pred).filter((v) => v > 0);
  const yLo = Math.min(...all) * 0.8;
  const yHi = Math.max(...all) * 1.25;
  const sx = linearScale(1, tMax, a.x0, a.x1);
  const sy = logScale(yLo, yHi, a.y0, a.y1);

  const trials = [...new Set(trial)].sort((p, q) => p - q);
  for (const k of trials) {
    const xs: number[] = [];
    const ys: number[] = [];
    for (let i = 0; i < t.length; i++) {
      if (trial[i] === k && emp[i] > 0) {
        xs.push(sx.toPx(t[i]));
        ys.push(sy.toPx(emp[i]));
      }
    }
    svg.polyline(xs, ys, { stroke: TRIAL_COLOR, width: 1, cls: "trial-line" });
  }
  // one SE overlay from the per-t prediction of the first trial
  const xs: number[] = [];
  const ys: number[] = [];
  for (let i = 0; i < t.length; i++) {
    if (trial[i] === trials[0] && pred[i] > 0) {
      xs.push(sx.toPx(t[i]));
      ys.push(sy.toPx(pred[i]));
    }
  }
  svg.polyline(xs, ys, { stroke: BOLD_COLOR, width: 3, cls: "se-line" });
  axes(svg, "iteration t", "total normalized MSE (log)",
       "AMP MSE trajectories vs state evolution");
  return svg.render();
}

/** Misdetection / false-alarm tradeoff, log-log, with the equal-error
 * point marked at the minimum |p_md - p_fa|. */
export function rocFigure(table: Table, path: string): string {
  const cols = requireColumns(
    table, ["location", "nu_log", "p_md_theory", "p_fa_theory",
            "p_md_empirical", "p_fa_empirical"], path);
  const loc = cols.get("location")!;
  const pmd = cols.get("p_md_theory")!;
  const pfa = cols.get("p_fa_theory")!;
  const pmdE = cols.get("p_md_empirical")!;
  const pfaE = cols.get("p_fa_empirical")!;

  // average tradeoff over locations per threshold index
  const locs = [...new Set(loc)].sort((p, q) => p - q);
  const perLoc = loc.length / locs.length;
  const mdAvg: number[] = [];
  const faAvg: number[] = [];
  const mdAvgE: number[] = [];
  const faAvgE: number[] = [];
  for (let k = 0; k < perLoc; k++) {
    let sMd = 0, sFa = 0, sMdE = 0, sFaE = 0, nE = 0;
    for (let j = 0; j < locs.length; j++) {
      const i = j * perLoc + k;
      sMd += pmd[i];
      sFa += pfa[i];
      if (Number.isFinite(pmdE[i]) && Number.isFinite(pfaE[i])) {
        sMdE += pmdE[i];
        sFaE += pfaE[i];
        nE += 1;
      }
    }
    mdAvg.push(sMd / locs.length);
    faAvg.push(sFa / locs.length);
    if (nE === locs.length) {
      mdAvgE.push(sMdE / nE);
      faAvgE.push(sFaE / nE);
    }
  }

  const svg = new SvgCanvas();
  const a = plotArea(svg);
  const floor = 1e-7;
  const clip = (v: number) => Math.max(v, floor);
  const sx = logScale(floor, 1, a.x0, a.x1);
  const sy = logScale(floor, 1, a.y0, a.y1);
  svg.polyline(faAvg.map((v) => sx.toPx(clip(v))),
               mdAvg.map((v) => sy.toPx(clip(v))),
               { stroke: BOLD_COLOR, width: 2, cls: "roc-theory" });
  for (let i = 0; i < mdAvgE.length; i++) {
    if (mdAvgE[i] > 0 && faAvgE[i] > 0) {
      svg.circle(sx.toPx(clip(faAvgE[i])), sy.toPx(clip(mdAvgE[i])), 3,
                 TRIAL_COLOR, "roc-empirical");
    }
  }
  let best = 0;
  for (let i = 1; i < mdAvg.length; i++) {
    if (Math.abs(mdAvg[i] - faAvg[i]) < Math.abs(mdAvg[best] - faAvg[best])) {
      best = i;
    }
  }
  svg.circle(sx.toPx(clip(faAvg[best])), sy.toPx(clip(mdAvg[best])), 5,
             "#d62728", "equal-error-marker");
  axes(svg, "false-alarm probability", "misdetection probability",
       "Neyman-Pearson tradeoff (theory curve, MC points)");
  return svg.render();
}

/** Channel-estimation error comparison bars per location. */
export function estimationFigure(table: Table, path: string): string {
  const names = ["location", "mse_Ad_empirical", "mse_Ad_theory",
                 "mse_genie_empirical", "mse_genie_asymptotic"];
  const cols = requireColumns(table, names, path);
  const loc = cols.get("location")!;
  const series = names.slice(1).map((n) => cols.get(n)!);
  const colors = [TRIAL_COLOR, BOLD_COLOR, GENIE_COLOR, "#9467bd"];

  const svg = new SvgCanvas();
  const a = plotArea(svg);
  const finite = series.flat().filter((v) => Number.isFinite(v) && v > 0);
  const yHi = Math.max(...finite) * 1.2;
  const sy = linearScale(0, yHi, a.y0, a.y1);
  const groupW = (a.x1 - a.x0) / loc.length;
  const barW = groupW / (series.length + 1);
  loc.forEach((u, i) => {
    series.forEach((vals, s) => {
      const v = vals[i];
      if (!Number.isFinite(v)) {
        return;
      }
      const x = a.x0 + i * groupW + s * barW + barW / 2;
      svg.rect(x, sy.toPx(v), barW * 0.9, a.y0 - sy.toPx(v), colors[s],
               `bar-${names[s + 1]}`);
    });
    svg.text(a.x0 + i * groupW + groupW / 2, a.y0 + 14, String(u), 9, "middle");
  });
  axes(svg, "location", "per-antenna MSE",
       "Detected-active channel estimation error vs genie");
  return svg.render();
}

/** Per-user rate CDF staircases (UatF and genie). */
export function rateCdfFigure(table: Table, path: string): string {
  const cols = requireColumns(
    table, ["location", "rate_uatf_bits", "rate_genie_bits", "cdf_weight"],
    path);
  const uatf = cols.get("rate_uatf_bits")!;
  const genie = cols.get("rate_genie_bits")!;
  const w = cols.get("cdf_weight")!;

  const svg = new SvgCanvas();
  const a = plotArea(svg);
  const xHi = Math.max(...uatf.concat(genie)) * 1.1;
  const sx = linearScale(0, xHi, a.x0, a.x1);
  const sy = linearScale(0, 1, a.y0, a.y1);

  const staircase = (rates: number[], cls: string, color: string) => {
    const order = rates.map((_, i) => i).sort((p, q) => rates[p] - rates[q]);
    let cum = 0;
    let prevX = sx.toPx(0);
    let prevY = sy.toPx(0);
    const xs = [prevX];
    const ys = [prevY];
    for (const i of order) {
      const x = sx.toPx(rates[i]);
      xs.push(x, x);
      ys.push(prevY, sy.toPx(cum + w[i]));
      cum += w[i];
      prevY = sy.toPx(cum);
      svg.circle(x, prevY, 2.2, color, `${cls}-jump`);
    }
    xs.push(sx.toPx(xHi));
    ys.push(prevY);
    svg.polyline(xs, ys, { stroke: color, width: 2, cls });
  };
  staircase(uatf, "cdf-uatf", BOLD_COLOR);
  staircase(genie, "cdf-genie", GENIE_COLOR);
  axes(svg, "rate (bit/symbol)", "CDF over active users",
       "Per-user ACK rate CDF: UatF vs genie");
  return svg.render();
}

export const FIGURE_KINDS: Record<string, (t: Table, p: string) => string> = {
  mse_trace: mseTraceFigure,
  roc: rocFigure,
  estimation: estimationFigure,
  rate_cdf: rateCdfFigure,
};
