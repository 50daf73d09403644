// Pure transcript rendering: the DOM produced here is a function of the
// gateway payloads and nothing else. Prompts are inserted as text nodes,
// never transformed, so the displayed value byte-equals the API value.

import type { CorrectionTrace } from "./api";

export interface TranscriptEntry {
  role: "user" | "assistant";
  text: string;
  image_url?: string;
  drawing_prompt?: string;
  correction_trace?: CorrectionTrace;
}

export function assertEntryInvariants(entry: TranscriptEntry): void {
  if (entry.role === "assistant" && entry.image_url !== undefined) {
    if (entry.drawing_prompt === undefined) {
      throw new Error("assistant image entries must carry a drawing prompt");
    }
  }
  if (entry.image_url !== undefined && entry.role === "user") {
    throw new Error("user entries never carry image_url");
  }
}

function correctionSection(doc: Document, trace: CorrectionTrace): HTMLElement {
  const section = doc.createElement("div");
  section.className = "correction-trace";
  const first = doc.createElement("div");
  first.className = "first-response";
  first.textContent = trace.first_response;
  section.appendChild(first);
  if (trace.fallback) {
    const note = doc.createElement("div");
    note.className = "fallback-note";
    note.textContent = "self-check unreadable, first response kept";
    section.appendChild(note);
  } else if (trace.verdict !== null) {
    const verdict = doc.createElement("div");
    verdict.className = `verdict verdict-${trace.verdict.kind}`;
    if (trace.verdict.kind === "wrong") {
      verdict.textContent = `rule ${trace.verdict.violated_rule}: ${
        trace.verdict.explanation ?? ""
      }`;
    } else {
      verdict.textContent = "first response confirmed";
    }
    section.appendChild(verdict);
  }
  return section;
}

// Collapsible per-turn detail panel: raw drawing prompt plus the
// correction verdict when the turn ran two-step.
function promptInspector(doc: Document, entry: TranscriptEntry): HTMLElement {
  const details = doc.createElement("details");
  details.className = "prompt-inspector";
  const summary = doc.createElement("summary");
  summary.textContent = "prompt inspector";
  details.appendChild(summary);
  const prompt = doc.createElement("pre");
  prompt.className = "drawing-prompt";
  prompt.textContent = entry.drawing_prompt ?? "";
  details.appendChild(prompt);
  if (entry.correction_trace !== undefined) {
    details.appendChild(correctionSection(doc, entry.correction_trace));
  }
  return details;
}

export function renderEntry(doc: Document, entry: TranscriptEntry): HTMLElement {
  assertEntryInvariants(entry);
  const bubble = doc.createElement("div");
  bubble.className = `bubble bubble-${entry.role}`;
  if (entry.image_url !== undefined) {
    const img = doc.createElement("img");
    img.className = "generated-image";
    img.src = entry.image_url;
    img.alt = entry.drawing_prompt ?? "";
    bubble.appendChild(img);
    bubble.appendChild(promptInspector(doc, entry));
  } else {
    const text = doc.createElement("div");
    text.className = "bubble-text";
    text.textContent = entry.text;
    bubble.appendChild(text);
    if (entry.role === "assistant" && entry.correction_trace !== undefined) {
      bubble.appendChild(promptInspector(doc, entry));
    }
  }
  return bubble;
}

export function renderTranscript(
  doc: Document,
  entries: TranscriptEntry[]
): HTMLElement {
  const container = doc.createElement("div");
  container.className = "transcript";
  for (const entry of entries) {
    container.appendChild(renderEntry(doc, entry));
  }
  return container;
}
