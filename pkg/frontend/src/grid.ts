import type { BrushRect, MaskDoc, TensorDoc } from './types.js';

const SVG_NS = 'http://www.w3.org/2000/svg';

/**
 * Single-hue green ramp. t in [0, 1], higher t renders darker so the
 * strongest cells stand out on a light page.
 */
export function greenShade(t: number): string {
  const clamped = Math.max(0, Math.min(1, t));
  const light = 94 - 64 * clamped;
  return `hsl(140 45% ${light.toFixed(1)}%)`;
}

/** Number of selected cells encoded in a mask. */
export function maskSelected(mask: MaskDoc): number {
  let total = 0;
  for (let i = 1; i < mask.runs.length; i += 2) total += mask.runs[i]!;
  return total;
}

/**
 * Union of brush rectangles as a run-length encoded mask over the grid,
 * row major. Counts alternate gap/run and always start with the leading
 * gap, matching what the mask endpoint expects.
 */
export function brushesToMask(shape: number[], brushes: BrushRect[]): MaskDoc {
  const [rows, cols] = [shape[0]!, shape[1]!];
  const flat = new Array<boolean>(rows * cols).fill(false);
  for (const b of brushes) {
    const r0 = Math.max(0, Math.min(b.r0, b.r1));
    const r1 = Math.min(rows - 1, Math.max(b.r0, b.r1));
    const c0 = Math.max(0, Math.min(b.c0, b.c1));
    const c1 = Math.min(cols - 1, Math.max(b.c0, b.c1));
    for (let r = r0; r <= r1; r++) {
      for (let c = c0; c <= c1; c++) flat[r * cols + c] = true;
    }
  }
  const runs = [0];
  let current = false;
  for (const v of flat) {
    if (v === current) {
      runs[runs.length - 1] = runs[runs.length - 1]! + 1;
    } else {
      runs.push(1);
      current = v;
    }
  }
  return { shape: [rows, cols], runs };
}

export interface GridOptions {
  brushes?: BrushRect[];
  cellSize?: number;
  onBrush?: (rect: BrushRect) => void;
}

/**
 * Draw one feature map's activation grid as square cells coloured by the
 * green ramp. Dragging across cells reports the swept rectangle through
 * onBrush; the caller owns the brush list and re-renders with it.
 */
export function renderActivationGrid(
  container: HTMLElement,
  doc: TensorDoc,
  opts: GridOptions = {},
): SVGSVGElement {
  const [rows, cols] = [doc.shape[0]!, doc.shape[1]!];
  const cell = opts.cellSize ?? 24;
  const brushes = opts.brushes ?? [];
  const svg = document.createElementNS(SVG_NS, 'svg');
  svg.setAttribute('class', 'activation-grid');
  svg.setAttribute('viewBox', `0 0 ${cols * cell} ${rows * cell}`);
  svg.setAttribute('width', String(cols * cell));
  svg.setAttribute('height', String(rows * cell));
  if (doc.feature_map !== undefined) svg.setAttribute('data-fm', String(doc.feature_map));

  let maxAbs = 0;
  for (const v of doc.data) maxAbs = Math.max(maxAbs, Math.abs(v));

  const brushed = new Set<number>();
  const covered = brushesToMask([rows, cols], brushes);
  let pos = 0;
  covered.runs.forEach((count, i) => {
    if (i % 2 === 1) {
      for (let k = pos; k < pos + count; k++) brushed.add(k);
    }
    pos += count;
  });

  // drag state for the brush gesture
  let anchor: { r: number; c: number } | null = null;

  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const v = doc.data[r * cols + c]!;
      const el = document.createElementNS(SVG_NS, 'rect');
      const isBrushed = brushed.has(r * cols + c);
      el.setAttribute('class', isBrushed ? 'grid-cell brushed' : 'grid-cell');
      el.setAttribute('x', String(c * cell));
      el.setAttribute('y', String(r * cell));
      el.setAttribute('width', String(cell));
      el.setAttribute('height', String(cell));
      el.setAttribute('fill', greenShade(maxAbs === 0 ? 0 : Math.abs(v) / maxAbs));
      el.setAttribute('stroke', isBrushed ? '#263238' : '#eceff1');
      el.setAttribute('stroke-width', isBrushed ? '2' : '1');
      el.setAttribute('data-row', String(r));
      el.setAttribute('data-col', String(c));
      el.setAttribute('data-value', String(v));

      el.addEventListener('mousedown', () => {
        anchor = { r, c };
      });
      el.addEventListener('mouseup', () => {
        if (!anchor) return;
        const rect: BrushRect = {
          r0: Math.min(anchor.r, r),
          c0: Math.min(anchor.c, c),
          r1: Math.max(anchor.r, r),
          c1: Math.max(anchor.c, c),
        };
        anchor = null;
        opts.onBrush?.(rect);
      });
      svg.appendChild(el);
    }
  }

  container.replaceChildren(svg);
  return svg;
}
