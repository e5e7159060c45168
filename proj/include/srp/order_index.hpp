#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace srp {

/// Rank structure for move-to-front over N particles. Particles occupy slots
/// of a Fenwick tree with room in front; move-to-front takes the next free
/// slot before the current front. When the front runs out the occupied slots
/// are packed against the end again (O(N), once every N moves).
class OrderIndex
{
public:
    /// rank[i] is the initial rank of particle i; must be a permutation of 0..N-1.
    explicit OrderIndex(const std::vector<std::uint32_t>& rank)
        : n_(static_cast<std::uint32_t>(rank.size())), capacity_(2 * n_ + 1), slot_of_(n_), owner_(capacity_, kEmpty),
          tree_(capacity_ + 1, 0)
    {
        front_ = capacity_ - n_;
        for (std::uint32_t i = 0; i < n_; ++i)
        {
            if (rank[i] >= n_ || owner_[front_ + rank[i]] != kEmpty)
                throw std::invalid_argument("initial ranks are not a permutation");
            slot_of_[i] = front_ + rank[i];
            owner_[slot_of_[i]] = i;
        }
        rebuild();
    }

    std::size_t size() const noexcept { return n_; }

    std::uint32_t rank_of(std::uint32_t particle) const
    {
        check(particle);
        return prefix(slot_of_[particle]);
    }

    /// Particle currently at rank r (0 = top).
    std::uint32_t particle_at(std::uint32_t r) const
    {
        if (r >= n_) throw std::out_of_range("rank " + std::to_string(r) + " out of range");
        // Fenwick descent for the (r+1)-th occupied slot
        std::uint32_t pos = 0;
        std::uint32_t remaining = r + 1;
        for (std::uint32_t step = top_bit_; step > 0; step >>= 1)
        {
            const std::uint32_t next = pos + step;
            if (next <= capacity_ && tree_[next] < remaining)
            {
                pos = next;
                remaining -= tree_[next];
            }
        }
        return owner_[pos];
    }

    /// Moves `particle` to rank 0; everything ranked above it shifts down one rank.
    void move_to_front(std::uint32_t particle)
    {
        check(particle);
        const std::uint32_t slot = slot_of_[particle];
        if (slot == front_) return;
        if (front_ == 0) compact();
        const std::uint32_t old_slot = slot_of_[particle];
        add(old_slot, -1);
        owner_[old_slot] = kEmpty;
        --front_;
        slot_of_[particle] = front_;
        owner_[front_] = particle;
        add(front_, +1);
    }

    /// Ranks of all particles, O(N).
    std::vector<std::uint32_t> ranks() const
    {
        std::vector<std::uint32_t> out(n_);
        std::uint32_t r = 0;
        for (std::uint32_t s = front_; s < capacity_; ++s)
            if (owner_[s] != kEmpty) out[owner_[s]] = r++;
        return out;
    }

private:
    static constexpr std::uint32_t kEmpty = 0xffffffffu;

    void check(std::uint32_t particle) const
    {
        if (particle >= n_) throw std::out_of_range("unknown particle " + std::to_string(particle));
    }

    // number of occupied slots strictly before `slot`
    std::uint32_t prefix(std::uint32_t slot) const noexcept
    {
        std::uint32_t s = 0;
        for (std::uint32_t i = slot; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

    void add(std::uint32_t slot, int delta) noexcept
    {
        for (std::uint32_t i = slot + 1; i <= capacity_; i += i & (~i + 1))
            tree_[i] = static_cast<std::uint32_t>(static_cast<int>(tree_[i]) + delta);
    }

    void rebuild()
    {
        std::fill(tree_.begin(), tree_.end(), 0u);
        for (std::uint32_t s = 0; s < capacity_; ++s)
            if (owner_[s] != kEmpty) tree_[s + 1] += 1;
        for (std::uint32_t i = 1; i <= capacity_; ++i)
        {
            const std::uint32_t parent = i + (i & (~i + 1));
            if (parent <= capacity_) tree_[parent] += tree_[i];
        }
        top_bit_ = 1;
        while (top_bit_ * 2 <= capacity_) top_bit_ *= 2;
    }

    void compact()
    {
        std::uint32_t write = capacity_;
        for (std::uint32_t s = capacity_; s-- > 0;)
        {
            if (owner_[s] == kEmpty) continue;
            const std::uint32_t p = owner_[s];
            owner_[s] = kEmpty;
            owner_[--write] = p;
            slot_of_[p] = write;
        }
        front_ = write;
        rebuild();
    }

    std::uint32_t n_;
    std::uint32_t capacity_;
    std::uint32_t front_ = 0;
    std::uint32_t top_bit_ = 1;
    std::vector<std::uint32_t> slot_of_;
    std::vector<std::uint32_t> owner_;
    std::vector<std::uint32_t> tree_;
};

} // namespace srp
