/**
 * Session flow: login, content-warning interstitial, then one task at a time
 * until the queue empties or the daily cap trips. Submission is guarded
 * against double-clicks; a 409 (someone already answered) skips forward with
 * a notice; a network failure shows a retry banner and never advances.
 */

import { AnnotationApi, ApiError, Progress, Task } from './api.js';
import {
  renderInterstitial,
  renderLogin,
  renderNotice,
  renderRating,
  renderStop,
  renderTask,
} from './views.js';

export class AnnotationApp {
  private annotator: string | null = null;
  private currentTask: Task | null = null;
  private progress: Progress | null = null;
  private submitting = false;
  private keyHandler: ((event: KeyboardEvent) => void) | null = null;

  constructor(
    private root: HTMLElement,
    private api: AnnotationApi,
  ) {}

  start(): void {
    this.show(renderLogin((annotator) => {
      this.annotator = annotator;
      this.show(renderInterstitial(() => void this.advance()));
    }));
  }

  /** Test hook: start a session without the login/interstitial clicks. */
  async startSession(annotator: string): Promise<void> {
    this.annotator = annotator;
    await this.advance();
  }

  private show(screen: HTMLElement): void {
    if (this.keyHandler) {
      document.removeEventListener('keydown', this.keyHandler);
      this.keyHandler = null;
    }
    this.root.replaceChildren(screen);
  }

  private notice(message: string, onRetry?: () => void): void {
    this.root.querySelectorAll('.notice-banner').forEach((n) => n.remove());
    this.root.prepend(renderNotice(message, onRetry));
  }

  async advance(): Promise<void> {
    if (!this.annotator) throw new Error('no annotator in session');
    let next;
    try {
      this.progress = await this.api.progress(this.annotator);
      next = await this.api.nextTask(this.annotator);
    } catch (err) {
      this.notice(`Could not reach the service (${String(err)})`, () => void this.advance());
      return;
    }
    if (next.task === null) {
      this.currentTask = null;
      this.show(renderStop(this.progress, next.reason ?? 'done'));
      return;
    }
    this.currentTask = next.task;
    const screen = renderTask(
      next.task,
      this.api.mediaUrl(next.task),
      this.progress,
      (label) => void this.submitLabel(label),
    );
    this.show(screen);
    this.keyHandler = (event: KeyboardEvent) => {
      const index = Number(event.key) - 1;
      const labels = this.currentTask?.allowed_labels ?? [];
      if (index >= 0 && index < labels.length) void this.submitLabel(labels[index]);
    };
    document.addEventListener('keydown', this.keyHandler);
  }

  private async submitLabel(label: string): Promise<void> {
    if (!this.annotator || !this.currentTask || this.submitting) return;
    this.submitting = true;
    this.root.querySelectorAll<HTMLButtonElement>('.label-button').forEach((b) => {
      b.disabled = true;
    });
    const task = this.currentTask;
    try {
      await this.api.submitAnnotation(this.annotator, task.sample_id, task.stage, label);
      await this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // answered elsewhere: skip with a notice, the service is the truth
        await this.advance();
        this.notice(`Task ${task.sample_id} was already answered; skipped.`);
      } else if (err instanceof ApiError && err.status === 429) {
        await this.advance(); // service reports cap-reached; show the stop screen
      } else {
        this.root.querySelectorAll<HTMLButtonElement>('.label-button').forEach((b) => {
          b.disabled = false;
        });
        this.notice('Submission failed; nothing was saved.', () => void this.submitLabel(label));
      }
    } finally {
      this.submitting = false;
    }
  }

  /** Rating flow: ground-truth summary beside the meme, three 1-10 sliders. */
  async showRating(sampleId: string, imageUrl: string | null = null): Promise<void> {
    if (!this.annotator) throw new Error('no annotator in session');
    const summaryText = await this.api.summary(sampleId);
    const screen = renderRating(sampleId, summaryText, imageUrl, (values) => {
      void this.submitRating(sampleId, values);
    });
    this.show(screen);
  }

  private async submitRating(sampleId: string, values: Record<string, number>): Promise<void> {
    if (!this.annotator || this.submitting) return;
    this.submitting = true;
    try {
      await this.api.submitRating(this.annotator, sampleId, {
        completeness: values.completeness,
        fluency: values.fluency,
        grammar: values.grammar,
      });
      this.show(renderStop(this.progress, 'rating submitted'));
    } catch (err) {
      this.notice('Rating submission failed; nothing was saved.');
    } finally {
      this.submitting = false;
    }
  }
}

export function mount(root: HTMLElement, baseUrl = ''): AnnotationApp {
  const app = new AnnotationApp(root, new AnnotationApi(baseUrl));
  app.start();
  return app;
}
