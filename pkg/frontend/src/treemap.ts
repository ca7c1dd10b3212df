import type { Encoding, FillsDoc, TreemapDoc } from './types.js';
import { ROLE_COLORS } from './river.js';
import { greenShade } from './grid.js';

const SVG_NS = 'http://www.w3.org/2000/svg';

export interface TreemapOptions {
  /** Fill values for this layer; bars are omitted when absent. */
  fills?: FillsDoc | null;
  selectedFm?: number | null;
  onSelectFm?: (fm: number) => void;
}

function rectEl(cls: string, x: number, y: number, w: number, h: number): SVGRectElement {
  const el = document.createElementNS(SVG_NS, 'rect');
  el.setAttribute('class', cls);
  el.setAttribute('x', String(x));
  el.setAttribute('y', String(y));
  el.setAttribute('width', String(w));
  el.setAttribute('height', String(h));
  return el;
}

/**
 * Render one layer's set-relation treemap.
 *
 * Every region cell holds one vertical bar per member feature map. Bar
 * height is the map's value relative to the largest magnitude on the layer,
 * so a full-height bar marks the layer maximum. Activation difference bars
 * are solid colour from the green ramp; contribution bars use a dotted
 * pattern fill so the two encodings are told apart at a glance.
 */
export function renderTreemap(
  container: HTMLElement,
  doc: TreemapDoc,
  opts: TreemapOptions = {},
): SVGSVGElement {
  const fills = opts.fills ?? null;
  const encoding: Encoding = fills?.encoding ?? 'activation_diff';
  const svg = document.createElementNS(SVG_NS, 'svg');
  svg.setAttribute('class', `treemap encoding-${encoding}`);
  svg.setAttribute('viewBox', `0 0 ${doc.canvas.w} ${doc.canvas.h}`);
  svg.setAttribute('width', String(doc.canvas.w));
  svg.setAttribute('height', String(doc.canvas.h));
  svg.setAttribute('data-layer', String(doc.layer));

  // ids are scoped per layer so two treemaps can share a page
  const dotId = `dotfill-${doc.layer}`;
  const defs = document.createElementNS(SVG_NS, 'defs');
  const pattern = document.createElementNS(SVG_NS, 'pattern');
  pattern.setAttribute('id', dotId);
  pattern.setAttribute('patternUnits', 'userSpaceOnUse');
  pattern.setAttribute('width', '6');
  pattern.setAttribute('height', '6');
  const dot = document.createElementNS(SVG_NS, 'circle');
  dot.setAttribute('cx', '3');
  dot.setAttribute('cy', '3');
  dot.setAttribute('r', '1.5');
  dot.setAttribute('fill', greenShade(0.85));
  pattern.appendChild(dot);
  defs.appendChild(pattern);
  svg.appendChild(defs);

  for (const frame of doc.set_rects) {
    const el = rectEl('set-frame', frame.rect.x, frame.rect.y, frame.rect.w, frame.rect.h);
    el.setAttribute('data-set', frame.set);
    el.setAttribute('fill', 'none');
    el.setAttribute('stroke', ROLE_COLORS[frame.set] ?? '#555');
    el.setAttribute('stroke-width', '3');
    svg.appendChild(el);
  }

  let maxAbs = 0;
  if (fills) {
    for (const v of Object.values(fills.values)) {
      maxAbs = Math.max(maxAbs, Math.abs(v));
    }
  }

  for (const cell of doc.cells) {
    const group = document.createElementNS(SVG_NS, 'g');
    group.setAttribute('class', 'cell');
    group.setAttribute('data-sets', cell.sets.join('+'));

    const bg = rectEl('cell-bg', cell.rect.x, cell.rect.y, cell.rect.w, cell.rect.h);
    bg.setAttribute('fill', '#fafafa');
    bg.setAttribute('stroke', '#90a4ae');
    bg.setAttribute('stroke-width', '1');
    group.appendChild(bg);

    const slot = cell.rect.w / cell.fms.length;
    const barW = slot * 0.6;
    cell.fms.forEach((fm, i) => {
      const value = fills ? fills.values[String(fm)] : undefined;
      const x = cell.rect.x + slot * i + (slot - barW) / 2;
      let bar: SVGRectElement;
      if (value === undefined || maxAbs === 0) {
        // no data for this map: draw a stub so the slot stays clickable
        bar = rectEl('fill-bar empty', x, cell.rect.y + cell.rect.h - 2, barW, 2);
        bar.setAttribute('fill', '#cfd8dc');
      } else {
        const ratio = Math.abs(value) / maxAbs;
        const barH = ratio * cell.rect.h;
        bar = rectEl('fill-bar', x, cell.rect.y + cell.rect.h - barH, barW, barH);
        if (encoding === 'contribution') {
          bar.setAttribute('fill', `url(#${dotId})`);
          bar.setAttribute('stroke', greenShade(ratio));
          bar.setAttribute('stroke-width', '1');
        } else {
          bar.setAttribute('fill', greenShade(ratio));
        }
        bar.setAttribute('data-value', String(value));
      }
      bar.setAttribute('data-fm', String(fm));
      bar.setAttribute('data-encoding', encoding);
      if (opts.selectedFm === fm) {
        bar.classList.add('selected');
        bar.setAttribute('stroke', '#263238');
        bar.setAttribute('stroke-width', '2');
      }
      bar.style.cursor = 'pointer';
      bar.addEventListener('click', () => opts.onSelectFm?.(fm));
      const tip = document.createElementNS(SVG_NS, 'title');
      tip.textContent =
        value === undefined ? `fm ${fm}` : `fm ${fm}: ${value.toPrecision(4)} (${encoding})`;
      bar.appendChild(tip);
      group.appendChild(bar);
    });

    svg.appendChild(group);
  }

  container.replaceChildren(svg);
  return svg;
}
