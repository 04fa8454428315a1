// Wire types mirroring the gateway's JSON envelopes.

export interface Turn {
  author: "user" | "system";
  text: string;
  kind: string;
}

export interface ProposalService {
  name: string;
  params: Record<string, unknown>;
}

export interface SessionEnvelope {
  session_id: string;
  state: { session_id: string; pass: string; turn_count: number };
  turns: Turn[];
  transcript: Turn[];
  proposal?: ProposalService[];
  app_url?: string;
}

export interface UserProfileInput {
  user_id: string;
  current_location?: string;
  stated_preferences?: Record<string, string>;
}

export interface FeedbackInput {
  application_rating: number;
  accuracy_rating: number;
  relevance_rating: number;
  query_summary?: string;
  missing_services?: string[];
  unnecessary_services?: string[];
  suggestions?: string;
}
