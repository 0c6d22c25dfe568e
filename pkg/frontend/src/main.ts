// DOM wiring: palette, canvas interactions, task picker, feedback panel.

import { ApiClient } from "./api.js";
import { Board, PlacedTile } from "./board.js";
import { drawBoard } from "./render.js";
import { Syncer, serviceTransport } from "./sync.js";
import { CatalogSpec, Template } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function start(): Promise<void> {
  const api = new ApiClient("");
  const canvas = el<HTMLCanvasElement>("board");
  const ctx = canvas.getContext("2d")!;
  const palette = el<HTMLDivElement>("palette");
  const tasks = el<HTMLDivElement>("tasks");
  const feedbackPanel = el<HTMLUListElement>("feedback");
  const banner = el<HTMLDivElement>("offline-banner");
  const snapToggle = el<HTMLInputElement>("snap-toggle");
  const undoButton = el<HTMLButtonElement>("undo");
  const clearButton = el<HTMLButtonElement>("clear");

  let catalog: CatalogSpec[];
  let templates: Template[];
  try {
    [catalog, templates] = await Promise.all([api.catalog(), api.templates()]);
  } catch {
    banner.hidden = false;
    banner.textContent = "service unreachable: start it with `tilelab serve`";
    return;
  }

  const board = new Board(catalog, canvas.width, canvas.height);
  let selected: PlacedTile | null = null;
  let activeTemplate: Template | null = null;

  const syncer = new Syncer(
    serviceTransport(
      (scene) => api.detect(scene),
      (scene, tid) => api.composeCheck(scene, tid),
    ),
    {
      onApply: (payload) => {
        banner.hidden = true;
        board.lastDetections = payload.detections;
        board.lastResult = payload.compose;
        feedbackPanel.replaceChildren(
          ...(payload.compose?.feedback ?? []).map((line) => {
            const li = document.createElement("li");
            li.textContent = line;
            li.className = line === "composition complete" ? "ok" : "";
            return li;
          }),
        );
        redraw();
      },
      onError: () => {
        banner.hidden = false;
        banner.textContent = "service offline: feedback paused";
      },
    },
  );

  function redraw(): void {
    drawBoard(ctx, board, { selectedId: selected?.id ?? null, silhouette: activeTemplate });
  }

  function sync(): void {
    syncer.request(board.toScene(), board.taskId);
  }

  // palette
  for (const spec of catalog) {
    const item = document.createElement("button");
    item.className = "palette-item";
    item.title = spec.shape;
    item.style.setProperty("--tile-color", `rgb(${spec.color.join(",")})`);
    item.textContent = spec.shape.replace("_", " ");
    item.addEventListener("click", () => {
      selected = board.place(spec.id, board.width / 2, board.height / 2);
      redraw();
      sync();
    });
    palette.appendChild(item);
  }

  // task picker
  const noneButton = document.createElement("button");
  noneButton.textContent = "free play";
  noneButton.addEventListener("click", () => {
    activeTemplate = null;
    board.selectTask(null);
    feedbackPanel.replaceChildren();
    redraw();
    sync();
  });
  tasks.appendChild(noneButton);
  for (const template of templates) {
    const item = document.createElement("button");
    item.textContent = template.id;
    item.addEventListener("click", () => {
      activeTemplate = template;
      board.selectTask(template.id);
      feedbackPanel.replaceChildren();
      redraw();
      sync();
    });
    tasks.appendChild(item);
  }

  // pointer interactions: drag to move, wheel to rotate
  let dragging: PlacedTile | null = null;
  let dragOffset = { x: 0, y: 0 };

  canvas.addEventListener("pointerdown", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    const hit = board.hitTest(x, y);
    selected = hit;
    if (hit) {
      dragging = hit;
      dragOffset = { x: hit.cx - x, y: hit.cy - y };
      canvas.setPointerCapture(ev.pointerId);
    }
    redraw();
  });

  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const rect = canvas.getBoundingClientRect();
    board.move(dragging.id, ev.clientX - rect.left + dragOffset.x, ev.clientY - rect.top + dragOffset.y);
    redraw();
    sync();
  });

  canvas.addEventListener("pointerup", () => {
    dragging = null;
  });

  canvas.addEventListener("wheel", (ev) => {
    if (!selected) return;
    ev.preventDefault();
    board.rotate(selected.id, ev.deltaY > 0 ? 7.5 : -7.5);
    redraw();
    sync();
  });

  canvas.addEventListener("dblclick", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const hit = board.hitTest(ev.clientX - rect.left, ev.clientY - rect.top);
    if (hit) {
      board.remove(hit.id);
      if (selected?.id === hit.id) selected = null;
      redraw();
      sync();
    }
  });

  snapToggle.addEventListener("change", () => {
    board.snapRotation = snapToggle.checked;
  });

  undoButton.addEventListener("click", () => {
    if (board.undo()) {
      selected = null;
      redraw();
      sync();
    }
  });

  clearButton.addEventListener("click", () => {
    board.clear();
    selected = null;
    redraw();
    sync();
  });

  redraw();
  sync();
}

void start();
