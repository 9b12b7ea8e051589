/**
 * DOM builders for each screen. Pure functions of their inputs: the app
 * holds no label state beyond the in-flight task, so a refresh always
 * resumes cleanly from the service.
 */

import type { Progress, Task } from './api.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderLogin(onStart: (annotator: string) => void): HTMLElement {
  const root = el('div', 'screen login-screen');
  root.append(el('h1', undefined, 'Annotation console'));
  const input = el('input', 'annotator-input');
  input.placeholder = 'annotator id';
  input.setAttribute('aria-label', 'annotator id');
  const button = el('button', 'start-button', 'Start session');
  button.addEventListener('click', () => {
    if (input.value.trim()) onStart(input.value.trim());
  });
  root.append(input, button);
  return root;
}

export function renderInterstitial(onAccept: () => void): HTMLElement {
  const root = el('div', 'screen content-warning');
  root.append(el('h1', undefined, 'Content warning'));
  root.append(
    el(
      'p',
      'warning-text',
      'This session contains memes that may be toxic, hateful, dangerous, or ' +
        'offensive. Take breaks whenever you need to, and remember the daily ' +
        'limit exists for your wellbeing. Continue only when ready.',
    ),
  );
  const button = el('button', 'accept-warning', 'I understand, begin');
  button.addEventListener('click', onAccept);
  root.append(button);
  return root;
}

export function renderProgress(progress: Progress): HTMLElement {
  const wrap = el('div', 'progress');
  const bar = el('progress') as HTMLProgressElement;
  bar.max = progress.cap;
  bar.value = progress.submitted_today;
  wrap.append(bar, el('span', 'progress-text', `${progress.submitted_today}/${progress.cap} today`));
  return wrap;
}

export function renderTask(
  task: Task,
  imageUrl: string,
  progress: Progress | null,
  onLabel: (label: string) => void,
): HTMLElement {
  const root = el('div', 'screen task-screen');
  root.dataset.sampleId = task.sample_id;
  if (progress) root.append(renderProgress(progress));
  root.append(el('h2', 'task-stage', `Stage ${task.stage}`));

  const figure = el('figure', 'meme');
  const img = el('img', 'meme-image') as HTMLImageElement;
  img.src = imageUrl;
  img.alt = `meme ${task.sample_id}`;
  figure.append(img);
  root.append(figure);

  const meta = el('dl', 'meta');
  const pairs: Array<[string, string]> = [
    ['Title', task.title],
    ['Tags', task.tags.join(', ')],
    ['OCR text', task.ocr_text],
  ];
  for (const [key, value] of pairs) {
    meta.append(el('dt', undefined, key), el('dd', undefined, value));
  }
  root.append(meta);

  const buttons = el('div', 'label-buttons');
  task.allowed_labels.forEach((label, i) => {
    const button = el('button', 'label-button', `${i + 1}. ${label}`);
    button.dataset.label = label;
    button.addEventListener('click', () => onLabel(label));
    buttons.append(button);
  });
  root.append(buttons);

  const drawer = el('details', 'guidelines-drawer');
  drawer.append(el('summary', undefined, 'Label guidelines'));
  for (const [label, definition] of Object.entries(task.guidelines)) {
    const entry = el('p', 'guideline');
    entry.append(el('strong', undefined, `${label}: `), document.createTextNode(definition));
    drawer.append(entry);
  }
  root.append(drawer);
  return root;
}

export function renderStop(progress: Progress | null, reason: string): HTMLElement {
  const root = el('div', 'screen stop-screen');
  root.append(el('h1', undefined, reason === 'cap reached' ? 'Daily cap reached' : 'All done'));
  if (progress) {
    root.append(el('p', 'cap-count', `${progress.submitted_today}/${progress.cap} today`));
  }
  root.append(
    el(
      'p',
      undefined,
      reason === 'cap reached'
        ? 'You have reached the daily limit. Thank you; see you tomorrow.'
        : 'No tasks remaining in your queue.',
    ),
  );
  return root;
}

export function renderNotice(message: string, onRetry?: () => void): HTMLElement {
  const banner = el('div', 'notice-banner', message);
  if (onRetry) {
    const retry = el('button', 'retry-button', 'Retry');
    retry.addEventListener('click', onRetry);
    banner.append(retry);
  }
  return banner;
}

export interface RatingState {
  touched: Set<string>;
  values: Record<string, number>;
}

const CRITERIA = ['completeness', 'fluency', 'grammar'] as const;

export function renderRating(
  sampleId: string,
  summaryText: string,
  imageUrl: string | null,
  onSubmit: (values: Record<string, number>) => void,
): HTMLElement {
  const root = el('div', 'screen rating-screen');
  root.append(el('h2', undefined, `Rate the summary for ${sampleId}`));
  if (imageUrl) {
    const img = el('img', 'meme-image') as HTMLImageElement;
    img.src = imageUrl;
    img.alt = `meme ${sampleId}`;
    root.append(img);
  }
  root.append(el('blockquote', 'summary-text', summaryText));

  const state: RatingState = { touched: new Set(), values: {} };
  const submit = el('button', 'submit-rating', 'Submit rating') as HTMLButtonElement;
  submit.disabled = true;

  for (const criterion of CRITERIA) {
    const row = el('div', 'slider-row');
    const label = el('label', undefined, `${criterion} `);
    const slider = el('input', 'score-slider') as HTMLInputElement;
    slider.type = 'range';
    slider.min = '1';
    slider.max = '10';
    slider.step = '1';
    slider.value = '5';
    slider.dataset.criterion = criterion;
    const value = el('output', 'score-value', '–');
    slider.addEventListener('input', () => {
      state.touched.add(criterion);
      state.values[criterion] = Number(slider.value);
      value.textContent = slider.value;
      submit.disabled = state.touched.size < CRITERIA.length;
    });
    label.append(slider);
    row.append(label, value);
    root.append(row);
  }

  submit.addEventListener('click', () => {
    if (state.touched.size === CRITERIA.length) onSubmit({ ...state.values });
  });
  root.append(submit);
  return root;
}
