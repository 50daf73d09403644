// Console shell: session lifecycle, send locking, and error surfaces.
// One turn per session may be in flight at a time; the send controls are
// disabled while a request runs, matching the server's serialization
// contract, and a 409 that slips through is shown as a toast.

import {
  AssistantPayload,
  GatewayBusyError,
  GatewayClient,
  GatewayError,
  SessionInfo,
} from "./api";
import { TranscriptEntry, renderEntry } from "./transcript";

export class ChatConsole {
  private session: SessionInfo | null = null;
  private inFlight = false;

  private readonly banner: HTMLElement;
  private readonly sessionLabel: HTMLElement;
  private readonly transcript: HTMLElement;
  private readonly toast: HTMLElement;
  private readonly input: HTMLTextAreaElement;
  private readonly sendButton: HTMLButtonElement;
  private readonly fileInput: HTMLInputElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: GatewayClient,
    private readonly doc: Document = root.ownerDocument
  ) {
    this.banner = this.el("div", "error-banner");
    this.banner.hidden = true;
    this.sessionLabel = this.el("div", "session-label");
    this.transcript = this.el("div", "transcript");
    this.toast = this.el("div", "toast");
    this.toast.hidden = true;
    this.input = this.el("textarea", "message-input") as HTMLTextAreaElement;
    this.sendButton = this.el("button", "send-button") as HTMLButtonElement;
    this.sendButton.textContent = "Send";
    this.fileInput = this.el("input", "image-input") as HTMLInputElement;
    this.fileInput.type = "file";

    this.sendButton.addEventListener("click", () => {
      void this.send();
    });

    for (const node of [
      this.banner,
      this.sessionLabel,
      this.transcript,
      this.toast,
      this.input,
      this.fileInput,
      this.sendButton,
    ]) {
      root.appendChild(node);
    }
  }

  private el(tag: string, className: string): HTMLElement {
    const node = this.doc.createElement(tag);
    node.className = className;
    return node;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  async start(seed?: number): Promise<void> {
    try {
      this.session = await this.client.createSession(seed);
    } catch (error) {
      this.banner.hidden = false;
      this.banner.textContent = `gateway unreachable: ${String(error)}`;
      return;
    }
    this.banner.hidden = true;
    this.sessionLabel.textContent = `session ${this.session.session_id} (seed ${this.session.seed})`;
    this.transcript.replaceChildren();
  }

  private setLocked(locked: boolean): void {
    this.inFlight = locked;
    this.sendButton.disabled = locked;
    this.input.disabled = locked;
  }

  private appendEntry(entry: TranscriptEntry): HTMLElement {
    const bubble = renderEntry(this.doc, entry);
    this.transcript.appendChild(bubble);
    return bubble;
  }

  private showToast(message: string): void {
    this.toast.hidden = false;
    this.toast.textContent = message;
  }

  private assistantEntry(payload: AssistantPayload): TranscriptEntry {
    const entry: TranscriptEntry = { role: "assistant", text: payload.text };
    if (payload.modality === "image" && payload.image_url !== undefined) {
      entry.image_url = this.client.imageUrl(payload.image_url);
      entry.drawing_prompt = payload.drawing_prompt;
    }
    if (payload.correction_trace !== undefined) {
      entry.correction_trace = payload.correction_trace;
    }
    return entry;
  }

  async send(imageB64?: string): Promise<void> {
    if (this.session === null || this.inFlight) {
      return;
    }
    const text = this.input.value.trim();
    if (text === "") {
      return;
    }
    const session = this.session;
    this.setLocked(true);
    this.toast.hidden = true;
    // optimistic user bubble; removed again if the turn was refused
    const userBubble = this.appendEntry({ role: "user", text });
    try {
      const payload = await this.client.sendMessage(
        session.session_id,
        text,
        imageB64
      );
      this.appendEntry(this.assistantEntry(payload));
      this.input.value = "";
    } catch (error) {
      userBubble.remove();
      if (error instanceof GatewayBusyError) {
        this.showToast("a turn is already running; wait for it to finish");
      } else if (error instanceof GatewayError) {
        const bubble = this.appendEntry({
          role: "assistant",
          text: `backend error (${error.kind})`,
        });
        bubble.classList.add("bubble-error");
        const retry = this.el("button", "retry-button") as HTMLButtonElement;
        retry.textContent = "Retry";
        retry.addEventListener("click", () => {
          bubble.remove();
          this.input.value = text;
          void this.send(imageB64);
        });
        bubble.appendChild(retry);
      } else {
        this.banner.hidden = false;
        this.banner.textContent = `gateway unreachable: ${String(error)}`;
      }
    } finally {
      this.setLocked(false);
    }
  }
}
