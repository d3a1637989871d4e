/** DOM wiring for the explorer page. All retrieval logic lives behind
 * the API; this file only moves values between controls, the session,
 * and the rendered panels. */

import { POLICIES, SearchApi } from "./api.js";
import { diffRankings } from "./diff.js";
import { SearchPanel, type PanelView } from "./panel.js";
import {
  renderDiff,
  renderError,
  renderExpansion,
  renderHistoryEntry,
  renderHits,
  renderOffGrid,
  renderTiming,
} from "./render.js";
import { GRID, SearchSession, offGridFlags } from "./session.js";

function byId<T extends HTMLElement>(id: string): T {
  const element = document.getElementById(id);
  if (element === null) throw new Error(`missing element #${id}`);
  return element as T;
}

const api = new SearchApi("");
const session = new SearchSession();

const queryInput = byId<HTMLInputElement>("query");
const policySelect = byId<HTMLSelectElement>("policy");
const comparePolicySelect = byId<HTMLSelectElement>("compare-policy");
const mSlider = byId<HTMLInputElement>("m-slider");
const mEntry = byId<HTMLInputElement>("m-entry");
const tSlider = byId<HTMLInputElement>("t-slider");
const tEntry = byId<HTMLInputElement>("t-entry");
const alphaSlider = byId<HTMLInputElement>("alpha");
const alphaLabel = byId<HTMLSpanElement>("alpha-value");
const offGridLabel = byId<HTMLSpanElement>("off-grid");
const submitButton = byId<HTMLButtonElement>("submit");
const compareButton = byId<HTMLButtonElement>("compare");
const statusLine = byId<HTMLSpanElement>("status");
const hitsPane = byId<HTMLDivElement>("hits");
const expansionPane = byId<HTMLDivElement>("expansion");
const comparePane = byId<HTMLDivElement>("compare-view");
const rightHitsPane = byId<HTMLDivElement>("hits-right");
const historyList = byId<HTMLUListElement>("history");

for (const select of [policySelect, comparePolicySelect]) {
  for (const policy of POLICIES) {
    const option = document.createElement("option");
    option.value = policy;
    option.textContent = policy;
    select.append(option);
  }
}
comparePolicySelect.value = "Fiction_RLM";

function leftView(view: PanelView): void {
  if (view.status === "loading") statusLine.textContent = "searching...";
  if (view.status === "error") {
    statusLine.textContent = "";
    hitsPane.innerHTML = renderError(view.errorMessage ?? "request failed", view.retryable);
    expansionPane.innerHTML = "";
    return;
  }
  if (view.status !== "ready" || view.response === null) return;
  statusLine.innerHTML = renderTiming(view.response);
  hitsPane.innerHTML = renderHits(view.response.hits);
  expansionPane.innerHTML = renderExpansion(view.response.expansion, view.response.policy);
  refreshCompare();
}

function rightView(view: PanelView): void {
  if (view.status === "error") {
    rightHitsPane.innerHTML = renderError(view.errorMessage ?? "request failed", view.retryable);
    return;
  }
  if (view.status !== "ready" || view.response === null) return;
  rightHitsPane.innerHTML = renderHits(view.response.hits);
  refreshCompare();
}

const leftPanel = new SearchPanel(api, leftView);
const rightPanel = new SearchPanel(api, rightView);

function refreshCompare(): void {
  const left = leftPanel.view.response;
  const right = rightPanel.view.response;
  if (left === null || right === null) return;
  comparePane.innerHTML = renderDiff(diffRankings(left.hits, right.hits));
}

function syncControls(): void {
  queryInput.value = session.state.query;
  policySelect.value = session.state.policy;
  mSlider.value = String(session.state.M);
  mEntry.value = String(session.state.M);
  tSlider.value = String(session.state.T);
  tEntry.value = String(session.state.T);
  alphaSlider.value = String(session.state.alpha);
  alphaLabel.textContent = session.state.alpha.toFixed(2);
  offGridLabel.innerHTML = renderOffGrid(offGridFlags(session.state));
  submitButton.disabled = !session.canSubmit();
  compareButton.disabled = !session.canSubmit();
}

function renderHistory(): void {
  historyList.innerHTML = session.history
    .map((entry, index) => renderHistoryEntry(entry, index))
    .join("");
}

queryInput.addEventListener("input", () => {
  session.setQuery(queryInput.value);
  syncControls();
});
policySelect.addEventListener("change", () => {
  session.setPolicy(policySelect.value);
  syncControls();
});
mSlider.addEventListener("input", () => {
  session.setFromSlider("M", Number(mSlider.value));
  syncControls();
});
tSlider.addEventListener("input", () => {
  session.setFromSlider("T", Number(tSlider.value));
  syncControls();
});
mEntry.addEventListener("change", () => {
  session.setFreeEntry("M", Number(mEntry.value));
  syncControls();
});
tEntry.addEventListener("change", () => {
  session.setFreeEntry("T", Number(tEntry.value));
  syncControls();
});
alphaSlider.addEventListener("input", () => {
  session.setAlpha(Number(alphaSlider.value));
  syncControls();
});

submitButton.addEventListener("click", () => {
  if (!session.canSubmit()) return;
  session.record();
  renderHistory();
  void leftPanel.submit(session.requestBody());
});

compareButton.addEventListener("click", () => {
  if (!session.canSubmit()) return;
  session.record();
  renderHistory();
  void leftPanel.submit(session.requestBody());
  void rightPanel.submit({ ...session.requestBody(), policy: comparePolicySelect.value });
});

historyList.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  if (target.dataset.action !== "restore") return;
  session.restore(Number(target.dataset.index));
  syncControls();
});

for (const pane of [hitsPane, rightHitsPane]) {
  pane.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.dataset.action !== "retry") return;
    void (pane === hitsPane ? leftPanel : rightPanel).retry();
  });
}

mSlider.min = String(GRID.M.min);
mSlider.max = String(GRID.M.max);
mSlider.step = String(GRID.M.step);
tSlider.min = String(GRID.T.min);
tSlider.max = String(GRID.T.max);
tSlider.step = String(GRID.T.step);
syncControls();
