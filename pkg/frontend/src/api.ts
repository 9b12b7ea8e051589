/**
 * Typed client for the annotation service HTTP API. The UI talks to the
 * service through this module exclusively; no other backends.
 */

export interface Task {
  sample_id: string;
  stage: 'I' | 'II';
  title: string;
  tags: string[];
  ocr_text: string;
  allowed_labels: string[];
  image_url: string;
  guidelines: Record<string, string>;
}

export interface NextTaskResponse {
  task: Task | null;
  reason: string | null;
}

export interface Progress {
  submitted_today: number;
  cap: number;
  remaining_total: number;
}

export interface RatingScores {
  completeness: number;
  fluency: number;
  grammar: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `network failure: ${String(err)}`);
  }
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class AnnotationApi {
  constructor(private baseUrl: string = '') {}

  private url(path: string): string {
    return this.baseUrl + path;
  }

  nextTask(annotator: string): Promise<NextTaskResponse> {
    return request<NextTaskResponse>(
      this.url(`/api/tasks/next?annotator=${encodeURIComponent(annotator)}`),
    );
  }

  async submitAnnotation(
    annotator: string,
    sample: string,
    stage: string,
    label: string,
  ): Promise<void> {
    await request(this.url('/api/annotations'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ annotator, sample, stage, label }),
    });
  }

  async submitRating(annotator: string, sample: string, scores: RatingScores): Promise<void> {
    await request(this.url('/api/ratings'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ annotator, sample, ...scores }),
    });
  }

  progress(annotator: string): Promise<Progress> {
    return request<Progress>(
      this.url(`/api/progress?annotator=${encodeURIComponent(annotator)}`),
    );
  }

  async summary(sample: string): Promise<string> {
    const body = await request<{ summary: string }>(
      this.url(`/api/samples/${encodeURIComponent(sample)}/summary`),
    );
    return body.summary;
  }

  mediaUrl(task: Task): string {
    return this.baseUrl + task.image_url;
  }
}
