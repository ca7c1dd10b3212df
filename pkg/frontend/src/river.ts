import type { RiverDoc } from './types.js';

const SVG_NS = 'http://www.w3.org/2000/svg';

/** Stroke per datapath role, used by both the river and the treemaps. */
export const ROLE_COLORS: Record<string, string> = {
  source: '#1565c0',
  adversarial: '#c62828',
  target: '#6a1b9a',
};

export interface RiverOptions {
  width?: number;
  height?: number;
  selectedLayer?: number | null;
  onSelectLayer?: (layerIndex: number) => void;
}

function polyline(points: [number, number][], cls: string, stroke: string): SVGPolylineElement {
  const el = document.createElementNS(SVG_NS, 'polyline');
  el.setAttribute('class', cls);
  el.setAttribute('points', points.map(([x, y]) => `${x},${y}`).join(' '));
  el.setAttribute('fill', 'none');
  el.setAttribute('stroke', stroke);
  el.setAttribute('stroke-width', '2');
  return el;
}

/**
 * Draw the three distance polylines, one vertex column per gated layer.
 * Vertex coordinates come straight from the layout document; nothing is
 * rescaled here. Each column gets an invisible hit rectangle so clicking
 * anywhere in a layer's band selects that layer.
 */
export function renderRiver(
  container: HTMLElement,
  doc: RiverDoc,
  opts: RiverOptions = {},
): SVGSVGElement {
  const width = opts.width ?? 960;
  const height = opts.height ?? 320;
  const svg = document.createElementNS(SVG_NS, 'svg');
  svg.setAttribute('class', 'river');
  svg.setAttribute('viewBox', `0 0 ${width} ${height}`);
  svg.setAttribute('width', String(width));
  svg.setAttribute('height', String(height));

  // hit bands first so the lines paint on top
  const xs = doc.source.map(([x]) => x);
  const n = xs.length;
  for (let i = 0; i < n; i++) {
    const x = xs[i]!;
    const left = i === 0 ? 0 : (xs[i - 1]! + x) / 2;
    const right = i === n - 1 ? width : (x + xs[i + 1]!) / 2;
    const hit = document.createElementNS(SVG_NS, 'rect');
    hit.setAttribute(
      'class',
      opts.selectedLayer === i ? 'layer-hit selected' : 'layer-hit',
    );
    hit.setAttribute('x', String(left));
    hit.setAttribute('y', '0');
    hit.setAttribute('width', String(right - left));
    hit.setAttribute('height', String(height));
    hit.setAttribute('fill', opts.selectedLayer === i ? '#eceff1' : 'transparent');
    hit.setAttribute('data-layer', String(i));
    hit.setAttribute('data-conv', String(doc.layers[i]));
    hit.style.cursor = 'pointer';
    hit.addEventListener('click', () => opts.onSelectLayer?.(i));
    svg.appendChild(hit);
  }

  svg.appendChild(polyline(doc.source, 'river-line source', ROLE_COLORS['source']!));
  svg.appendChild(
    polyline(doc.adversarial, 'river-line adversarial', ROLE_COLORS['adversarial']!),
  );
  svg.appendChild(polyline(doc.target, 'river-line target', ROLE_COLORS['target']!));

  const report = doc.pattern_report;
  if (report && report.detected) {
    // max_layer is 1-based, so the peak vertex sits at index max_layer - 1
    const peak = doc.adversarial[report.max_layer - 1];
    if (peak) {
      const marker = document.createElementNS(SVG_NS, 'circle');
      marker.setAttribute('class', 'pattern-marker');
      marker.setAttribute('cx', String(peak[0]));
      marker.setAttribute('cy', String(peak[1]));
      marker.setAttribute('r', '5');
      marker.setAttribute('fill', ROLE_COLORS['adversarial']!);
      const label = document.createElementNS(SVG_NS, 'title');
      label.textContent = `pattern peak at layer ${report.max_layer}`;
      marker.appendChild(label);
      svg.appendChild(marker);
    }
  }

  container.replaceChildren(svg);
  return svg;
}
