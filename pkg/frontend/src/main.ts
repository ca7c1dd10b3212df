import { ApiClient, ApiError } from './api.js';
import { renderRiver } from './river.js';
import { renderTreemap } from './treemap.js';
import { renderActivationGrid } from './grid.js';
import { traceContribution } from './trace.js';
import {
  addBrush,
  clearBrushes,
  initialState,
  reconcile,
  selectFeatureMap,
  selectLayer,
  type ViewState,
} from './state.js';
import type { FillsDoc, SessionDoc, TensorDoc, TreemapDoc } from './types.js';

interface Panel {
  container: HTMLElement;
  doc: TreemapDoc;
  fills: FillsDoc | null;
}

/**
 * Wire the page together. All data flows through the HTTP client; the page
 * holds nothing beyond the view state and the documents it last fetched.
 */
export async function boot(root: HTMLElement, api: ApiClient, sessionId: string): Promise<void> {
  const status = root.querySelector<HTMLElement>('#status')!;
  const riverEl = root.querySelector<HTMLElement>('#river')!;
  const layersEl = root.querySelector<HTMLElement>('#layers')!;
  const gridEl = root.querySelector<HTMLElement>('#grid')!;
  const traceButton = root.querySelector<HTMLButtonElement>('#trace')!;

  const say = (cls: string, msg: string) => {
    status.textContent = msg;
    status.className = cls;
  };

  let session: SessionDoc = await api.getSession(sessionId);
  const meta = await api.getModel(session.model_id);
  let state: ViewState = reconcile(initialState(sessionId), meta);
  let gridDoc: TensorDoc | null = null;
  const panels = new Map<number, Panel>();

  const riverDoc = await api.getRiver(sessionId);
  const drawRiver = () =>
    renderRiver(riverEl, riverDoc, {
      selectedLayer: state.layer,
      onSelectLayer: (i) => void pickLayer(i),
    });

  const drawPanel = (layerIndex: number) => {
    const panel = panels.get(layerIndex);
    if (!panel) return;
    renderTreemap(panel.container, panel.doc, {
      fills: panel.fills,
      selectedFm: state.layer === layerIndex ? state.featureMap : null,
      onSelectFm: (fm) => void pickFeatureMap(layerIndex, fm),
    });
  };

  const openPanel = async (layerIndex: number): Promise<void> => {
    let panel = panels.get(layerIndex);
    if (!panel) {
      const container = document.createElement('div');
      container.className = 'treemap-panel';
      container.dataset['layerIndex'] = String(layerIndex);
      // keep panels ordered by depth regardless of visit order
      const after = [...layersEl.children].find(
        (el) => Number((el as HTMLElement).dataset['layerIndex']) > layerIndex,
      );
      layersEl.insertBefore(container, after ?? null);
      panel = { container, doc: await api.getTreemap(sessionId, layerIndex), fills: null };
      panels.set(layerIndex, panel);
    }
    try {
      panel.fills = await api.getFills(sessionId, layerIndex, state.encoding);
    } catch (err) {
      // contribution fills do not exist until a trace lands; fall back
      if (err instanceof ApiError && err.status === 400) {
        panel.fills = await api.getFills(sessionId, layerIndex, 'activation_diff');
      } else {
        throw err;
      }
    }
    drawPanel(layerIndex);
  };

  const pickLayer = async (layerIndex: number): Promise<void> => {
    state = selectLayer(state, layerIndex);
    gridEl.replaceChildren();
    gridDoc = null;
    drawRiver();
    await openPanel(layerIndex);
    say('info', `layer ${layerIndex}: pick a feature map to inspect`);
  };

  const drawGrid = () => {
    if (!gridDoc) return;
    renderActivationGrid(gridEl, gridDoc, {
      brushes: state.brushes,
      onBrush: (rect) => {
        state = addBrush(state, rect);
        drawGrid();
      },
    });
  };

  const pickFeatureMap = async (layerIndex: number, fm: number): Promise<void> => {
    state = selectFeatureMap(selectLayer(state, layerIndex), fm);
    drawPanel(layerIndex);
    gridDoc = await api.getActivation(sessionId, session.triplet.adversarial, fm);
    drawGrid();
    say('info', `feature map ${fm}: drag on the grid to brush, then trace`);
  };

  traceButton.addEventListener('click', () => {
    void (async () => {
      if (!gridDoc) {
        say('warn', 'select a layer and feature map before tracing');
        return;
      }
      say('info', 'tracing contribution...');
      const outcome = await traceContribution(api, state, session, gridDoc.shape, {
        onBlocked: (msg) => say('warn', msg),
        onError: (msg) => say('error', `trace failed: ${msg}`),
        onFills: (layerIndex, fills) => {
          const panel = panels.get(layerIndex);
          if (panel) {
            panel.fills = fills;
            drawPanel(layerIndex);
          }
        },
      });
      state = outcome.state;
      if (outcome.traced) {
        session = await api.getSession(sessionId);
        state = clearBrushes(reconcile(state, meta));
        drawGrid();
        say('info', `contribution ${outcome.contributionId} traced; earlier layers updated`);
      }
    })();
  });

  drawRiver();
  say('info', 'click a layer band in the river to open its treemap');
}

function fromQuery(): { base: string; sessionId: string | null } {
  const params = new URLSearchParams(window.location.search);
  return { base: params.get('api') ?? '', sessionId: params.get('session') };
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  const { base, sessionId } = fromQuery();
  const root = document.getElementById('app')!;
  if (!sessionId) {
    root.textContent = 'missing ?session=<id> query parameter';
  } else {
    boot(root, new ApiClient(base), sessionId).catch((err) => {
      root.textContent = `failed to load session: ${err instanceof Error ? err.message : err}`;
    });
  }
}
