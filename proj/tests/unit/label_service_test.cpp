#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "stepwise/label_service.hpp"
#include "test_util.hpp"

namespace stepwise::service {
namespace {

using enum StepLabel;

TaskInput input(const std::string& id, std::size_t steps = 3) {
  std::vector<std::string> text;
  for (std::size_t i = 0; i < steps; ++i) text.push_back("step " + std::to_string(i));
  return {testing::solution(id, "prob-" + id, text), "Compute " + id + ".", "4"};
}

QcItem qc(const std::string& id, std::size_t steps, std::set<std::size_t> gold) {
  const auto in = input(id, steps);
  return {id, in.statement, in.ground_truth_answer, in.solution, std::move(gold)};
}

GenerationRequest batch(std::size_t n, std::vector<QcItem> qc_items = {}, const std::string& prefix = "s") {
  GenerationRequest r;
  for (std::size_t i = 0; i < n; ++i) r.tasks.push_back(input(prefix + std::to_string(i)));
  r.qc_items = std::move(qc_items);
  return r;
}

std::vector<StepLabel> all_positive(const LabelTask& t) { return std::vector(t.solution.steps.size(), positive); }

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> now = std::make_shared<std::atomic<std::int64_t>>(1000);
  Clock clock() const {
    return [n = now] { return n->load(); };
  }
};

ServiceConfig no_qc() {
  ServiceConfig c;
  c.qc_probability = 0.0;
  return c;
}

TEST(Contract, PhaseTwoShapes) {
  EXPECT_FALSE(check_phase2_contract({positive, negative}, 5));
  EXPECT_FALSE(check_phase2_contract({positive, neutral, positive}, 3));
  EXPECT_FALSE(check_phase2_contract({negative}, 1));
  EXPECT_TRUE(check_phase2_contract({positive, negative, positive}, 5));
  EXPECT_TRUE(check_phase2_contract({positive, positive}, 5));
  EXPECT_TRUE(check_phase2_contract({}, 5));
  EXPECT_TRUE(check_phase2_contract({positive, positive, positive}, 2));
}

TEST(Contract, QcAgreement) {
  EXPECT_TRUE(qc_agrees({positive, positive, negative}, {2}));
  EXPECT_FALSE(qc_agrees({positive, negative}, {2}));
  EXPECT_FALSE(qc_agrees({positive, positive, positive}, {2}));
  EXPECT_TRUE(qc_agrees({positive, negative}, {1, 2}));
  EXPECT_TRUE(qc_agrees({positive, positive}, {}));
  EXPECT_FALSE(qc_agrees({negative}, {}));
}

TEST(Leasing, OneTaskTwoLabelers) {
  LabelService svc(no_qc());
  svc.start_generation(batch(1));
  svc.admit_labeler("alice");
  svc.admit_labeler("bob");
  const auto a = svc.next_task("alice");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->task_id, "g1-t00000");
  EXPECT_FALSE(svc.next_task("bob"));
  EXPECT_EQ(svc.next_task("alice")->task_id, a->task_id);
  EXPECT_THROW(svc.submit_labels(a->task_id, "bob", all_positive(*a)), ServiceError);
  svc.submit_labels(a->task_id, "alice", all_positive(*a));
  EXPECT_EQ(svc.task(a->task_id)->state, TaskState::completed);
  EXPECT_EQ(svc.task(a->task_id)->labeled_by, "alice");
  EXPECT_FALSE(svc.next_task("alice"));
  EXPECT_FALSE(svc.generation_open());
}

TEST(Leasing, ServesInSelectionOrderAndInjectionsLast) {
  LabelService svc(no_qc());
  svc.start_generation(batch(3));
  const std::string injected = svc.inject_task(input("extra"));
  EXPECT_TRUE(svc.task(injected)->injected);
  svc.admit_labeler("a");
  std::vector<std::string> order;
  while (auto t = svc.next_task("a")) {
    order.push_back(t->task_id);
    svc.submit_labels(t->task_id, "a", all_positive(*t));
  }
  EXPECT_EQ(order, (std::vector<std::string>{"g1-t00000", "g1-t00001", "g1-t00002", injected}));
}

TEST(Leasing, ExpiryReturnsTaskToQueue) {
  FakeClock fake;
  ServiceConfig cfg = no_qc();
  cfg.lease_ttl_ms = 5000;
  LabelService svc(cfg, std::nullopt, fake.clock());
  svc.start_generation(batch(1));
  svc.admit_labeler("alice");
  svc.admit_labeler("bob");
  const auto t = svc.next_task("alice");
  *fake.now += 4999;
  EXPECT_FALSE(svc.next_task("bob"));
  *fake.now += 1;
  const auto again = svc.next_task("bob");
  ASSERT_TRUE(again);
  EXPECT_EQ(again->task_id, t->task_id);
  try {
    svc.submit_labels(t->task_id, "alice", all_positive(*t));
    FAIL() << "stale lease accepted";
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.kind(), ServiceError::Kind::stale_lease);
  }
  svc.submit_labels(t->task_id, "bob", all_positive(*t));
}

TEST(Leasing, ContractViolationLeavesLeaseIntact) {
  LabelService svc(no_qc());
  svc.start_generation(batch(1));
  svc.admit_labeler("a");
  const auto t = svc.next_task("a");
  try {
    svc.submit_labels(t->task_id, "a", {positive, negative, positive});
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.kind(), ServiceError::Kind::contract_violation);
  }
  EXPECT_EQ(svc.task(t->task_id)->state, TaskState::leased);
  svc.submit_labels(t->task_id, "a", {positive, negative});
  EXPECT_EQ(svc.task(t->task_id)->labels, (std::vector{positive, negative}));
  EXPECT_THROW(svc.submit_labels("nope", "a", {positive}), ServiceError);
  EXPECT_THROW(svc.next_task(""), ServiceError);
}

TEST(Screening, NewLabelerGetsOnlyQc) {
  ServiceConfig cfg;
  cfg.qc_probability = 0.0;
  LabelService svc(cfg);
  svc.start_generation(batch(5));
  EXPECT_FALSE(svc.next_task("fresh"));
  svc.add_qc_items({qc("q1", 2, {}), qc("q2", 3, {1})});
  for (int i = 0; i < 10; ++i) {
    const auto t = svc.next_task("fresh");
    ASSERT_TRUE(t);
    EXPECT_TRUE(t->is_qc);
    EXPECT_EQ(t->task_id.rfind("qc-", 0), 0u);
    svc.submit_labels(t->task_id, "fresh", all_positive(*t));
  }
  EXPECT_EQ(svc.labeler("fresh")->status, LabelerStatus::screening);
  EXPECT_EQ(svc.labeler("fresh")->screening_results.size(), 10u);
  EXPECT_EQ(svc.progress().front().pending, 5u);
}

// Drives a screening labeler through 30 QC items with the given pass count.
LabelerStatus screen_with(std::size_t passes) {
  LabelService svc(no_qc());
  svc.add_qc_items({qc("q", 2, {0})});
  std::optional<LabelerStatus> changed;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto t = svc.next_task("l");
    const auto ratings = i < passes ? std::vector{negative} : std::vector{positive, negative};
    const auto r = svc.submit_labels(t->task_id, "l", ratings);
    EXPECT_EQ(*r.qc_pass, i < passes);
    if (i + 1 < 30) {
      EXPECT_FALSE(r.labeler_status);
    }
    changed = r.labeler_status;
  }
  EXPECT_TRUE(changed);
  return svc.labeler("l")->status;
}

TEST(Screening, AdmissionThreshold) {
  EXPECT_EQ(screen_with(23), LabelerStatus::active);
  EXPECT_EQ(screen_with(22), LabelerStatus::removed);
  EXPECT_EQ(screen_with(30), LabelerStatus::active);
}

TEST(Screening, RejectedLabelerIsLockedOut) {
  LabelService svc(no_qc());
  svc.add_qc_items({qc("q", 1, {})});
  for (int i = 0; i < 30; ++i) {
    const auto t = svc.next_task("l");
    svc.submit_labels(t->task_id, "l", {negative});
  }
  EXPECT_EQ(svc.labeler("l")->removal_reason, "screening_failed");
  try {
    svc.next_task("l");
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.kind(), ServiceError::Kind::unauthorized);
  }
  EXPECT_EQ(svc.screen_labeler("l"), ScreeningDecision::rejected);
  EXPECT_THROW(svc.screen_labeler("ghost"), ServiceError);
}

// An active labeler served QC on every request, passing the first `passes`.
LabelService& continuous(LabelService& svc, std::size_t served, std::size_t passes) {
  svc.start_generation(batch(1, {qc("q", 2, {1})}));
  svc.admit_labeler("l");
  for (std::size_t i = 0; i < served; ++i) {
    const auto t = svc.next_task("l");
    EXPECT_TRUE(t->is_qc);
    svc.submit_labels(t->task_id, "l", i < passes ? std::vector{positive, negative} : std::vector{negative});
  }
  return svc;
}

ServiceConfig all_qc() {
  ServiceConfig c;
  c.qc_probability = 1.0;
  return c;
}

TEST(ContinuousQc, FloorOverWindow) {
  {
    LabelService svc(all_qc());
    continuous(svc, 20, 15);
    EXPECT_EQ(svc.labeler("l")->status, LabelerStatus::active);
    EXPECT_DOUBLE_EQ(*svc.labeler("l")->qc_agreement(), 0.75);
    EXPECT_EQ(svc.continuous_qc_review("l"), QcDecision::keep);
  }
  {
    LabelService svc(all_qc());
    continuous(svc, 20, 14);
    EXPECT_EQ(svc.labeler("l")->status, LabelerStatus::active);
  }
  {
    LabelService svc(all_qc());
    continuous(svc, 20, 13);
    EXPECT_EQ(svc.labeler("l")->status, LabelerStatus::removed);
    EXPECT_EQ(svc.labeler("l")->removal_reason, "qc_floor");
  }
  {
    LabelService svc(all_qc());
    continuous(svc, 19, 0);
    EXPECT_EQ(svc.labeler("l")->status, LabelerStatus::active);
    EXPECT_EQ(svc.continuous_qc_review("l"), QcDecision::keep);
    EXPECT_EQ(svc.continuous_qc_review("l", 10), QcDecision::remove);
  }
}

TEST(ContinuousQc, ShareMatchesProbability) {
  ServiceConfig cfg;
  cfg.qc_probability = 0.1;
  cfg.seed = 5;
  LabelService svc(cfg);
  GenerationRequest req;
  for (std::size_t i = 0; i < 10000; ++i) req.tasks.push_back(input("t" + std::to_string(i), 1));
  req.qc_items = {qc("q1", 1, {}), qc("q2", 1, {})};
  svc.start_generation(req);
  svc.admit_labeler("l");
  std::size_t qc_count = 0;
  const std::size_t serves = 10000;
  for (std::size_t i = 0; i < serves; ++i) {
    const auto t = svc.next_task("l");
    ASSERT_TRUE(t);
    qc_count += t->is_qc;
    svc.submit_labels(t->task_id, "l", {positive});
  }
  const double share = static_cast<double>(qc_count) / serves;
  EXPECT_NEAR(share, 0.1, 3 * std::sqrt(0.1 * 0.9 / serves));
  EXPECT_EQ(svc.stats()["qc_serves"], qc_count);
}

TEST(Generations, ConflictWhileOpen) {
  LabelService svc(no_qc());
  EXPECT_THROW(svc.inject_task(input("x")), ServiceError);
  EXPECT_EQ(svc.start_generation(batch(2)), 1u);
  try {
    svc.start_generation(batch(1, {}, "n"));
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.kind(), ServiceError::Kind::conflict);
  }
  EXPECT_THROW(svc.start_generation(GenerationRequest{}), ServiceError);
  svc.admit_labeler("a");
  while (auto t = svc.next_task("a")) svc.submit_labels(t->task_id, "a", all_positive(*t));
  EXPECT_EQ(svc.start_generation(batch(1, {}, "n")), 2u);
  EXPECT_TRUE(svc.task("g2-t00000"));
  const auto progress = svc.progress();
  ASSERT_EQ(progress.size(), 2u);
  EXPECT_EQ(progress[0].completed, 2u);
  EXPECT_EQ(progress[1].pending, 1u);
  EXPECT_THROW(svc.add_qc_items({qc("bad", 2, {5})}), ServiceError);
}

TEST(Concurrency, NoTaskLeasedTwice) {
  ServiceConfig cfg = no_qc();
  LabelService svc(cfg);
  svc.start_generation(batch(1000));
  std::vector<std::vector<std::string>> served(10);
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < 10; ++k) svc.admit_labeler("l" + std::to_string(k));
  for (std::size_t k = 0; k < 10; ++k) {
    threads.emplace_back([&, k] {
      const std::string who = "l" + std::to_string(k);
      while (auto t = svc.next_task(who)) {
        served[k].push_back(t->task_id);
        svc.submit_labels(t->task_id, who, all_positive(*t));
      }
    });
  }
  for (auto& t : threads) t.join();
  std::set<std::string> all;
  std::size_t total = 0;
  for (const auto& s : served) {
    total += s.size();
    all.insert(s.begin(), s.end());
  }
  EXPECT_EQ(total, 1000u);
  EXPECT_EQ(all.size(), 1000u);
  // Every leased event is for a task no other labeler held at the time.
  std::map<std::string, std::string> holder;
  for (const auto& e : svc.events()) {
    if (e.kind == EventKind::leased) {
      EXPECT_TRUE(holder.emplace(e.payload["task_id"], e.payload["labeler_id"]).second);
    } else if (e.kind == EventKind::task_completed) {
      EXPECT_EQ(holder.at(e.payload["task_id"]), e.payload["labeler_id"]);
    }
  }
}

// Some mixed traffic: screening, QC, real tasks and an expiry.
void drive(LabelService& svc, FakeClock& fake) {
  svc.start_generation(batch(6, {qc("q1", 2, {1}), qc("q2", 3, {})}));
  svc.admit_labeler("a");
  for (int i = 0; i < 4; ++i) {
    const auto t = svc.next_task("a");
    svc.submit_labels(t->task_id, "a", i % 2 ? all_positive(*t) : std::vector{positive, negative});
  }
  const auto s = svc.next_task("screen");
  svc.submit_labels(s->task_id, "screen", {negative});
  svc.next_task("a");
  *fake.now += 31LL * 60 * 1000;
  svc.expire_leases();
  svc.inject_task(input("late"));
}

TEST(Replay, ReloadReproducesState) {
  testing::TempDir dir;
  FakeClock fake;
  json before;
  {
    LabelService svc(ServiceConfig{}, dir.path(), fake.clock());
    drive(svc, fake);
    before = svc.state_json();
  }
  LabelService again(ServiceConfig{}, dir.path(), fake.clock());
  EXPECT_EQ(again.state_json(), before);

  ServiceState manual;
  for (const auto& e : again.events()) manual.apply(e);
  EXPECT_EQ(manual.to_json(), before);
  EXPECT_EQ(ServiceState::from_json(before).to_json(), before);
  EXPECT_THROW(manual.apply(again.events().front()), std::runtime_error);
}

TEST(Replay, SnapshotPlusSuffix) {
  testing::TempDir dir;
  FakeClock fake;
  ServiceConfig cfg;
  cfg.snapshot_interval = 7;
  json before;
  {
    LabelService svc(cfg, dir.path(), fake.clock());
    drive(svc, fake);
    svc.admit_labeler("b");
    before = svc.state_json();
  }
  ASSERT_TRUE(std::filesystem::exists(dir / "snapshot.json"));
  const json snap = json::parse(testing::read_text(dir / "snapshot.json"));
  EXPECT_LT(snap["last_sequence"].get<std::uint64_t>(), before["last_sequence"].get<std::uint64_t>());
  LabelService again(cfg, dir.path(), fake.clock());
  EXPECT_EQ(again.state_json(), before);
}

TEST(Replay, TornFinalLineIsDropped) {
  testing::TempDir dir;
  FakeClock fake;
  json before;
  {
    LabelService svc(ServiceConfig{}, dir.path(), fake.clock());
    drive(svc, fake);
    before = svc.state_json();
  }
  const auto log = testing::read_text(dir / "events.jsonl");
  testing::write_text(dir / "events.jsonl", log + R"({"sequence_number":999,"kind":"lea)");
  {
    LabelService again(ServiceConfig{}, dir.path(), fake.clock());
    EXPECT_EQ(again.state_json(), before);
    again.admit_labeler("c");
  }
  LabelService third(ServiceConfig{}, dir.path(), fake.clock());
  EXPECT_EQ(third.labeler("c")->status, LabelerStatus::active);

  testing::write_text(dir / "events.jsonl", "garbage\n" + log);
  std::filesystem::remove(dir / "snapshot.json");
  EXPECT_THROW(LabelService(ServiceConfig{}, dir.path(), fake.clock()), std::runtime_error);
}

TEST(Config, Validation) {
  ServiceConfig c;
  EXPECT_NO_THROW(c.validate());
  c.qc_probability = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.screening_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(ServiceConfig{}.to_json()["qc_probability"], 0.05);
}

}  // namespace
}  // namespace stepwise::service
