/** Minimal SVG chart builder: enough for line plots, staircases and bars
 * with linear or log axes. Output is a self-contained vector image. */

export interface Scale {
  toPx(v: number): number;
}

export function linearScale(lo: number, hi: number, pxLo: number, pxHi: number): Scale {
  const span = hi - lo || 1;
  return { toPx: (v) => pxLo + ((v - lo) / span) * (pxHi - pxLo) };
}

export function logScale(lo: number, hi: number, pxLo: number, pxHi: number): Scale {
  const llo = Math.log10(lo);
  const span = Math.log10(hi) - llo || 1;
  return { toPx: (v) => pxLo + ((Math.log10(v) - llo) / span) * (pxHi - pxLo) };
}

export class SvgCanvas {
  readonly width: number;
  readonly height: number;
  private parts: string[] = [];

  constructor(width = 720, height = 480) {
    this.width = width;
    this.height = height;
  }

  polyline(xs: number[], ys: number[], opts: { stroke?: string; width?: number;
      cls?: string; dash?: string } = {}): void {
    const pts = xs.map((x, i) => `${x.toFixed(2)},${ys[i].toFixed(2)}`).join(" ");
    const dash = opts.dash ? ` stroke-dasharray="${opts.dash}"` : "";
    const cls = opts.cls ? ` class="${opts.cls}"` : "";
    this.parts.push(
      `<polyline${cls} fill="none" stroke="${opts.stroke ?? "#1f77b4"}"` +
      ` stroke-width="${opts.width ?? 1}"${dash} points="${pts}"/>`);
  }

  circle(x: number, y: number, r: number, fill: string, cls?: string): void {
    const c = cls ? ` class="${cls}"` : "";
    this.parts.push(
      `<circle${c} cx="${x.toFixed(2)}" cy="${y.toFixed(2)}" r="${r}" fill="${fill}"/>`);
  }

  rect(x: number, y: number, w: number, h: number, fill: string, cls?: string): void {
    const c = cls ? ` class="${cls}"` : "";
    this.parts.push(
      `<rect${c} x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${w.toFixed(2)}"` +
      ` height="${h.toFixed(2)}" fill="${fill}"/>`);
  }

  text(x: number, y: number, content: string, size = 12, anchor = "start"): void {
    this.parts.push(
      `<text x="${x.toFixed(2)}" y="${y.toFixed(2)}" font-size="${size}"` +
      ` font-family="sans-serif" text-anchor="${anchor}">${content}</text>`);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke = "#333"): void {
    this.parts.push(
      `<line x1="${x1.toFixed(2)}" y1="${y1.toFixed(2)}" x2="${x2.toFixed(2)}"` +
      ` y2="${y2.toFixed(2)}" stroke="${stroke}" stroke-width="1"/>`);
  }

  render(): string {
    return `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}"` +
      ` height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">` +
      `<rect width="100%" height="100%" fill="white"/>` +
      this.parts.join("") + `</svg>`;
  }
}

export const MARGIN = { left: 70, right: 20, top: 30, bottom: 50 };
