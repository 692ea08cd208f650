#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "builders.hpp"
#include "generators.hpp"
#include "vicar/ingestion.hpp"
#include "vicar/json_io.hpp"

using namespace vicar;
using namespace vicar::testing;

namespace {

TranscriptSource srt(std::string payload) {
  TranscriptSource s;
  s.kind = SourceKind::SubtitleSRT;
  s.payload = std::move(payload);
  s.id = "lec";
  return s;
}

TranscriptSource vtt(std::string payload) {
  TranscriptSource s;
  s.kind = SourceKind::SubtitleVTT;
  s.payload = std::move(payload);
  s.id = "lec";
  return s;
}

Transcript five_segments() {
  Transcript t;
  t.id = "lec";
  t.language = "en";
  for (int i = 0; i < 5; ++i) {
    t.segments.push_back({Millis{i * 10000}, Millis{i * 10000 + 9000}, "segment " + std::to_string(i)});
  }
  return t;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(ParseTranscript, SrtKeepsCueTimingsToTheMillisecond) {
  auto t = parse_transcript(srt("1\n00:00:01,000 --> 00:00:03,000\nhello\n\n2\n00:00:03,500 --> 00:00:05,000\nworld\n"));
  ASSERT_EQ(t.segments.size(), 2u);
  EXPECT_EQ(t.segments[0].start.count, 1000);
  EXPECT_EQ(t.segments[1].start.count, 3500);
  EXPECT_EQ(t.segments[1].end.count, 5000);
  EXPECT_EQ(t.segments[0].text, "hello");
  EXPECT_TRUE(check_transcript(t).empty());
}

TEST(ParseTranscript, SrtToleratesCrlfAndBom) {
  auto t = parse_transcript(srt("\xEF\xBB\xBF" "1\r\n00:00:01,000 --> 00:00:02,000\r\nhi there\r\n"));
  ASSERT_EQ(t.segments.size(), 1u);
  EXPECT_EQ(t.segments[0].text, "hi there");
}

TEST(ParseTranscript, PlainTextIsOneSegmentVerbatim) {
  TranscriptSource s;
  s.kind = SourceKind::PlainText;
  s.payload = "waves transfer energy";
  auto t = parse_transcript(s);
  ASSERT_EQ(t.segments.size(), 1u);
  EXPECT_EQ(t.segments[0].text, "waves transfer energy");
  EXPECT_EQ(t.segments[0].start.count, 0);
  EXPECT_GT(t.segments[0].end, t.segments[0].start);
}

TEST(ParseTranscript, VttOverlapIsAParseError) {
  try {
    parse_transcript(vtt("WEBVTT\n\n00:00:01.000 --> 00:00:04.000\na\n\n00:00:03.000 --> 00:00:05.000\nb\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("overlapping segments"), std::string::npos);
    EXPECT_GT(e.line(), 1u);
  }
}

TEST(ParseTranscript, VttNeedsHeader) {
  EXPECT_THROW(parse_transcript(vtt("00:00:01.000 --> 00:00:04.000\na\n")), ParseError);
}

TEST(ParseTranscript, VttShortTimestampsParse) {
  auto t = parse_transcript(vtt("WEBVTT\n\n01:02.500 --> 01:04.000 align:start\nhello\n"));
  ASSERT_EQ(t.segments.size(), 1u);
  EXPECT_EQ(t.segments[0].start.count, 62500);
}

TEST(ParseTranscript, MalformedTimestampReportsLineAndOffset) {
  try {
    parse_transcript(srt("1\n00:00:01,000 --> 00:0x:03,000\nhello\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.byte_offset(), 2u);
  }
}

TEST(ParseTranscript, InvalidUtf8IsAnEncodingError) {
  EXPECT_EQ(code_of([] { parse_transcript(srt("1\n00:00:01,000 --> 00:00:02,000\n\xff\xfe\n")); }),
            ErrorCode::EncodingError);
}

TEST(ParseTranscript, StructuredJsonRoundTrips) {
  auto t = five_segments();
  TranscriptSource s;
  s.kind = SourceKind::StructuredJSON;
  s.payload = to_document(t).dump();
  EXPECT_EQ(parse_transcript(s), t);
}

TEST(ParseTranscript, IsDeterministic) {
  const std::string bytes = "1\n00:00:01,000 --> 00:00:03,000\nhello\n";
  EXPECT_EQ(parse_transcript(srt(bytes)), parse_transcript(srt(bytes)));
}

TEST(ParseTranscript, SourceKindFollowsExtension) {
  EXPECT_EQ(source_kind_for("a.srt"), SourceKind::SubtitleSRT);
  EXPECT_EQ(source_kind_for("a.VTT"), SourceKind::SubtitleVTT);
  EXPECT_EQ(source_kind_for("a.txt"), SourceKind::PlainText);
  EXPECT_EQ(source_kind_for("a.json"), SourceKind::StructuredJSON);
  EXPECT_THROW(source_kind_for("a.mp4"), Error);
}

TEST(TrimSection, ExactSegmentBoundsGiveThatSegment) {
  auto t = five_segments();
  auto s = trim_section(t, Millis{20000}, Millis{29000});
  EXPECT_EQ(s.text, "segment 2");
  EXPECT_EQ(s.id, "lec@20000-29000");
}

TEST(TrimSection, SpanningWindowMatchesBruteForceOverlapScan) {
  auto t = five_segments();
  const Millis a{15000}, b{35000};
  std::string oracle;
  for (const auto& seg : t.segments) {
    if (seg.start < b && a < seg.end) oracle += (oracle.empty() ? "" : " ") + seg.text;
  }
  auto s = trim_section(t, a, b);
  EXPECT_EQ(s.text, oracle);
  EXPECT_EQ(s.text, "segment 1 segment 2 segment 3");
  ASSERT_EQ(s.char_offsets.size(), 3u);
  for (const auto& m : s.char_offsets) {
    EXPECT_EQ(s.text.substr(m.text_range.start, m.text_range.length()), t.segments[*m.segment_index].text);
  }
  EXPECT_EQ(segment_at(s, 0), 1u);
  EXPECT_EQ(segment_at(s, s.text.size() - 1), 3u);
}

TEST(TrimSection, InvalidWindowsAreRangeErrors) {
  auto t = five_segments();
  EXPECT_EQ(code_of([&] { trim_section(t, Millis{5000}, Millis{5000}); }), ErrorCode::RangeError);
  EXPECT_EQ(code_of([&] { trim_section(t, Millis{6000}, Millis{1000}); }), ErrorCode::RangeError);
  EXPECT_EQ(code_of([&] { trim_section(t, Millis{0}, Millis{60000}); }), ErrorCode::RangeError);
  EXPECT_EQ(code_of([&] { trim_section(t, Millis{-1}, Millis{1000}); }), ErrorCode::RangeError);
}

TEST(EditSectionText, ReplacesTextAndKeepsHistory) {
  auto t = five_segments();
  t.segments[2].text = "wavelenght";
  auto s = trim_section(t, Millis{20000}, Millis{29000});
  auto edited = edit_section_text(s, "wavelength");
  EXPECT_EQ(edited.text, "wavelength");
  EXPECT_EQ(edited.start, s.start);
  EXPECT_EQ(edited.end, s.end);
  ASSERT_EQ(edited.history.size(), 1u);
  EXPECT_EQ(edited.history[0].text, "wavelenght");
  ASSERT_EQ(edited.char_offsets.size(), 1u);
  EXPECT_FALSE(edited.char_offsets[0].segment_index.has_value());
}

TEST(EditSectionText, EmptyReplacementIsRejected) {
  auto s = trim_section(five_segments(), Millis{0}, Millis{9000});
  EXPECT_EQ(code_of([&] { edit_section_text(s, ""); }), ErrorCode::EmptyText);
}

TEST(EditSectionText, TrimAgainDiscardsTheEdit) {
  auto t = five_segments();
  auto s = trim_section(t, Millis{0}, Millis{9000});
  auto edited = edit_section_text(s, "changed");
  EXPECT_EQ(trim_section(t, Millis{0}, Millis{9000}).text, "segment 0");
  EXPECT_NE(edited.text, "segment 0");
}

// ---------------------------------------------------------------------------
// Speech recognition

namespace {

class CannedAsr : public AsrClient {
 public:
  std::string transcribe(const std::string& media_ref) override {
    Transcript t;
    t.id = "asr";
    t.language = "en";
    t.segments = {{Millis{0}, Millis{1000}, "one " + media_ref},
                  {Millis{1000}, Millis{2000}, "two"},
                  {Millis{2000}, Millis{3000}, "three"}};
    return to_document(t).dump();
  }
};

class CountingAsr : public AsrClient {
 public:
  std::string transcribe(const std::string&) override {
    const int now = ++current;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --current;
    return CannedAsr().transcribe("x");
  }
  std::atomic<int> current{0};
  std::atomic<int> peak{0};
};

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

}  // namespace

TEST(Transcription, CannedCuesCompleteAsThreeSegments) {
  TranscriptionService service(std::make_shared<CannedAsr>());
  auto job = service.request_transcription("lecture.mp4");
  auto poll = job.wait();
  ASSERT_EQ(poll.status, JobStatus::Done) << poll.error;
  ASSERT_TRUE(poll.source.has_value());
  EXPECT_EQ(poll.source->kind, SourceKind::StructuredJSON);
  EXPECT_EQ(parse_transcript(*poll.source).segments.size(), 3u);
}

TEST(Transcription, NoEndpointIsAsrUnavailable) {
  TranscriptionService service(nullptr);
  EXPECT_EQ(code_of([&] { service.request_transcription("lecture.mp4"); }), ErrorCode::ASRUnavailable);
}

TEST(Transcription, InFlightCapIsRespected) {
  auto asr = std::make_shared<CountingAsr>();
  {
    TranscriptionService service(asr, 2);
    std::vector<TranscriptionJob> jobs;
    for (int i = 0; i < 6; ++i) jobs.push_back(service.request_transcription("m" + std::to_string(i)));
    for (auto& j : jobs) EXPECT_EQ(j.wait().status, JobStatus::Done);
  }
  EXPECT_LE(asr->peak.load(), 2);
  EXPECT_GE(asr->peak.load(), 1);
}

TEST(HttpAsr, ServerErrorFailsAfterBoundedRetries) {
  LocalServer local;
  std::atomic<int> hits{0};
  local.server.Post("/v1/audio/transcriptions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  local.start();

  AsrConfig cfg;
  cfg.base_url = local.url();
  cfg.max_retries = 2;
  cfg.backoff = std::chrono::milliseconds(1);
  HttpAsrClient client(cfg);
  EXPECT_EQ(code_of([&] { client.transcribe("lecture.mp4"); }), ErrorCode::ASRFailed);
  EXPECT_EQ(hits.load(), 3);
}

TEST(HttpAsr, SegmentsBecomeAStructuredTranscript) {
  LocalServer local;
  std::string seen_body;
  local.server.Post("/v1/audio/transcriptions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content(R"({"language":"en","segments":[{"start":0.0,"end":1.5,"text":"hello"},)"
                    R"({"start":1.5,"end":3.0,"text":"world"}]})",
                    "application/json");
  });
  local.start();

  AsrConfig cfg;
  cfg.base_url = local.url();
  HttpAsrClient client(cfg);
  TranscriptSource src;
  src.kind = SourceKind::StructuredJSON;
  src.payload = client.transcribe("https://example.org/lecture.mp4");
  auto t = parse_transcript(src);
  ASSERT_EQ(t.segments.size(), 2u);
  EXPECT_EQ(t.segments[1].start.count, 1500);
  auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body.at("media_url"), "https://example.org/lecture.mp4");
  EXPECT_EQ(body.at("model"), "whisper-1");
}
