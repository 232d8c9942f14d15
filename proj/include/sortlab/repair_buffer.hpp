#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sortlab/grpo.hpp"
#include "sortlab/rng.hpp"
#include "sortlab/task.hpp"

namespace sortlab {

struct BufferEntry {
    std::string task_id;
    std::vector<TokenId> prompt;
    std::vector<TokenId> reference;
    std::vector<TokenId> plan;  // oracle plan, known by construction
    int64_t enqueue_step = 0;
};

// FIFO queue of zero-reward prompts awaiting an auxiliary repair update.
// Single writer (the trainer); capacity 0 means unbounded.
class RepairBuffer {
public:
    explicit RepairBuffer(size_t aux_batch, size_t capacity = 0)
        : aux_batch_(aux_batch), capacity_(capacity) {
        if (aux_batch_ == 0) throw std::invalid_argument("aux batch must be positive");
    }

    size_t size() const { return entries_.size(); }
    size_t aux_batch() const { return aux_batch_; }
    int64_t total_enqueued() const { return total_enqueued_; }
    int64_t total_removed() const { return total_removed_; }
    int64_t total_evicted() const { return total_evicted_; }
    const std::deque<BufferEntry>& entries() const { return entries_; }

    void enqueue(BufferEntry e) {
        entries_.push_back(std::move(e));
        ++total_enqueued_;
        if (capacity_ > 0 && entries_.size() > capacity_) {
            entries_.pop_front();
            ++total_evicted_;
        }
    }

    bool ready() const { return entries_.size() >= aux_batch_; }

    // Uniform sample without replacement of exactly aux_batch entries,
    // deleted from the buffer. Fisher-Yates over indices keeps the draw
    // deterministic given the stream state.
    std::vector<BufferEntry> sample_and_remove(RngStream& rng) {
        if (!ready()) throw std::logic_error("buffer not ready");
        const size_t n = entries_.size();
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = 0; i < aux_batch_; ++i) {
            const size_t j = i + static_cast<size_t>(rng.next_below(n - i));
            std::swap(idx[i], idx[j]);
        }
        std::vector<size_t> picked(idx.begin(), idx.begin() + static_cast<long>(aux_batch_));
        std::vector<BufferEntry> out;
        out.reserve(aux_batch_);
        for (size_t i : picked) out.push_back(entries_[i]);
        std::sort(picked.begin(), picked.end());
        for (size_t i = picked.size(); i-- > 0;)
            entries_.erase(entries_.begin() + static_cast<long>(picked[i]));
        total_removed_ += static_cast<int64_t>(aux_batch_);
        return out;
    }

    // ---- crash-resume snapshot (JSON Lines, fields verbatim) ----

    void save_snapshot(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + path);
        for (const auto& e : entries_) {
            nlohmann::ordered_json j{{"task_id", e.task_id},
                                     {"prompt", e.prompt},
                                     {"reference", e.reference},
                                     {"plan", e.plan},
                                     {"enqueue_step", e.enqueue_step}};
            out << j.dump() << "\n";
        }
    }

    void load_snapshot(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + path);
        entries_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            BufferEntry e;
            e.task_id = j.at("task_id").get<std::string>();
            e.prompt = j.at("prompt").get<std::vector<TokenId>>();
            e.reference = j.at("reference").get<std::vector<TokenId>>();
            e.plan = j.at("plan").get<std::vector<TokenId>>();
            e.enqueue_step = j.at("enqueue_step").get<int64_t>();
            entries_.push_back(std::move(e));
        }
    }

private:
    std::deque<BufferEntry> entries_;
    size_t aux_batch_;
    size_t capacity_;
    int64_t total_enqueued_ = 0;
    int64_t total_removed_ = 0;
    int64_t total_evicted_ = 0;
};

// Appends the all-wrong groups' tasks in batch order; returns how many.
inline int enqueue_all_wrong(RepairBuffer& buffer, const std::vector<RolloutGroup>& groups,
                             const std::vector<Task>& tasks, int64_t step) {
    if (groups.size() != tasks.size()) throw std::invalid_argument("groups/tasks size mismatch");
    int count = 0;
    for (size_t i = 0; i < groups.size(); ++i) {
        if (!is_all_wrong(groups[i])) continue;
        BufferEntry e;
        e.task_id = tasks[i].task_id;
        e.prompt = tasks[i].prompt;
        e.reference = tasks[i].reference;
        e.plan = tasks[i].plan;
        e.enqueue_step = step;
        buffer.enqueue(std::move(e));
        ++count;
    }
    return count;
}

// Largest power of two strictly below the early all-wrong count (so an exact
// power of two maps to its half). 80 -> 64, 30 -> 16, 9 -> 8.
inline int suggest_buffer_batch(int initial_all_wrong_count) {
    if (initial_all_wrong_count < 2)
        throw std::invalid_argument("all-wrong count must be >= 2");
    int p = 1;
    while (2 * p < initial_all_wrong_count) p *= 2;
    return p;
}

}  // namespace sortlab
